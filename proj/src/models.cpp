// SPDX-License-Identifier: Apache-2.0
#include "matdiff/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "matdiff/errors.hpp"
#include "matdiff/image.hpp"

namespace matdiff {

namespace nn = torch::nn;

nlohmann::json ModelConfig::to_json() const {
    return {
        {"latent_channels", latent_channels},
        {"ae_widths", ae_widths},
        {"unet_width", unet_width},
        {"unet_levels", unet_levels},
        {"attn_heads", attn_heads},
        {"din_features", din_features},
        {"din_rdbs", din_rdbs},
        {"din_growth", din_growth},
        {"din_layers", din_layers},
        {"timesteps", timesteps},
        {"base_schedule", to_string(base_schedule)},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.ae_widths = j.value("ae_widths", c.ae_widths);
    c.unet_width = j.value("unet_width", c.unet_width);
    c.unet_levels = j.value("unet_levels", c.unet_levels);
    c.attn_heads = j.value("attn_heads", c.attn_heads);
    c.din_features = j.value("din_features", c.din_features);
    c.din_rdbs = j.value("din_rdbs", c.din_rdbs);
    c.din_growth = j.value("din_growth", c.din_growth);
    c.din_layers = j.value("din_layers", c.din_layers);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.base_schedule = base_schedule_from_string(j.value("base_schedule", to_string(c.base_schedule)));
    if (c.ae_widths.size() != 4) {
        throw InvalidArgument("ae_widths needs 4 entries (one per resolution level)");
    }
    if (c.latent_channels < 1 || c.unet_width < 1 || c.unet_levels < 1 || c.attn_heads < 1 ||
        c.din_rdbs < 1 || c.din_layers < 1 || c.timesteps < 1) {
        throw InvalidArgument("model sizes must be positive");
    }
    return c;
}

std::string ModelConfig::sha256() const { return sha256_hex(to_json().dump()); }

namespace {

// Eight channels per group: single-channel groups erase per-image intensity levels, which the
// autoencoder needs to reproduce flat colours.
int64_t groups_for(int64_t channels) {
    return channels % 8 == 0 ? std::max<int64_t>(1, channels / 8) : 1;
}

nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

nn::Conv2d conv1(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 1)); }

nn::GroupNorm group_norm(int64_t channels) {
    return nn::GroupNorm(nn::GroupNormOptions(groups_for(channels), channels));
}

torch::Tensor upsample2x(const torch::Tensor& x) {
    return torch::nn::functional::interpolate(
        x, torch::nn::functional::InterpolateFuncOptions()
               .scale_factor(std::vector<double>{2.0, 2.0})
               .mode(torch::kNearest));
}

} // namespace

// ---------------------------------------------------------------------------------------------

ResBlockImpl::ResBlockImpl(int64_t in_ch, int64_t out_ch, int64_t temb_dim) {
    norm1_ = register_module("norm1", group_norm(in_ch));
    conv1_ = register_module("conv1", conv3(in_ch, out_ch));
    norm2_ = register_module("norm2", group_norm(out_ch));
    conv2_ = register_module("conv2", conv3(out_ch, out_ch));
    if (in_ch != out_ch) {
        skip_ = register_module("skip", conv1(in_ch, out_ch));
    }
    if (temb_dim > 0) {
        temb_proj_ = register_module("temb_proj", nn::Linear(temb_dim, out_ch));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1_(torch::silu(norm1_(x)));
    if (temb_proj_ && temb.defined()) {
        h = h + temb_proj_(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
    }
    h = conv2_(torch::silu(norm2_(h)));
    return (skip_ ? skip_(x) : x) + h;
}

// ---------------------------------------------------------------------------------------------

AutoencoderImpl::AutoencoderImpl(const ModelConfig& cfg) : latent_channels_(cfg.latent_channels) {
    const auto& w = cfg.ae_widths;
    enc_in_ = register_module("enc_in", conv3(3, w[0]));
    enc_block0_ = register_module("enc_block0", ResBlock(w[0], w[0]));
    enc_down_ = register_module("enc_down", nn::ModuleList());
    for (size_t i = 1; i < 4; ++i) {
        enc_down_->push_back(conv3(w[i - 1], w[i], 2));
        enc_down_->push_back(ResBlock(w[i], w[i]));
    }
    enc_norm_ = register_module("enc_norm", group_norm(w[3]));
    enc_out_ = register_module("enc_out", conv3(w[3], 2 * cfg.latent_channels));

    dec_in_ = register_module("dec_in", conv3(cfg.latent_channels, w[3]));
    dec_mid_ = register_module("dec_mid", ResBlock(w[3], w[3]));
    dec_up_ = register_module("dec_up", nn::ModuleList());
    for (size_t i = 3; i >= 1; --i) {
        dec_up_->push_back(conv3(w[i], w[i - 1]));
        if (i > 1) {
            dec_up_->push_back(ResBlock(w[i - 1], w[i - 1]));
        }
    }
    dec_tail0_ = register_module("dec_tail0", ResBlock(w[0], w[0]));
    dec_tail1_ = register_module("dec_tail1", ResBlock(w[0], w[0]));
    dec_norm_ = register_module("dec_norm", group_norm(w[0]));
    dec_out_ = register_module("dec_out", conv3(w[0], 3));
    latent_scale_ = register_buffer("latent_scale", torch::ones({}));
}

namespace {

void check_image_batch(const torch::Tensor& images, const char* op) {
    if (images.dim() != 4 || images.size(1) != 3) {
        throw InvalidArgument(std::string(op) + ": expected images [N,3,H,W]");
    }
    if (images.size(2) % 8 != 0 || images.size(3) % 8 != 0) {
        throw InvalidArgument(std::string(op) + ": H and W must be divisible by 8, got " +
                              std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)));
    }
}

} // namespace

std::array<torch::Tensor, 2> AutoencoderImpl::encoder_taps(const torch::Tensor& images) {
    check_image_batch(images, "encode");
    auto layer1 = torch::silu(enc_in_(images));
    auto layer2 = enc_block0_(layer1);
    return {layer1, layer2};
}

EncoderOutput AutoencoderImpl::encode_full(const torch::Tensor& images) {
    auto taps = encoder_taps(images);
    auto h = taps[1];
    for (size_t i = 0; i < enc_down_->size(); i += 2) {
        h = enc_down_[i]->as<nn::Conv2d>()->forward(h);
        h = enc_down_[i + 1]->as<ResBlock>()->forward(h);
    }
    auto moments = enc_out_(torch::silu(enc_norm_(h)));
    auto parts = moments.chunk(2, 1);
    return {parts[0], parts[1].clamp(-30.0, 20.0), taps};
}

torch::Tensor AutoencoderImpl::encode(const torch::Tensor& images) {
    return encode_full(images).mean * latent_scale_;
}

torch::Tensor AutoencoderImpl::decode(const torch::Tensor& latents) {
    return decode_hooked(latents, nullptr);
}

torch::Tensor AutoencoderImpl::decode_hooked(const torch::Tensor& latents, const TapHook& hook) {
    if (latents.dim() != 4 || latents.size(1) != latent_channels_) {
        throw InvalidArgument("decode: expected latents [N," + std::to_string(latent_channels_) +
                              ",h,w]");
    }
    auto h = dec_mid_(dec_in_(latents / latent_scale_));
    for (size_t i = 0; i < dec_up_->size();) {
        h = torch::silu(dec_up_[i++]->as<nn::Conv2d>()->forward(upsample2x(h)));
        if (i < dec_up_->size() && dec_up_[i]->as<ResBlock>() != nullptr) {
            h = dec_up_[i++]->as<ResBlock>()->forward(h);
        }
    }
    h = dec_tail0_(h);
    if (hook) {
        h = hook(0, h);
    }
    h = dec_tail1_(h);
    if (hook) {
        h = hook(1, h);
    }
    return dec_out_(torch::silu(dec_norm_(h))).clamp(-1.0, 2.0);
}

void AutoencoderImpl::set_latent_scale(double s) {
    if (!(s > 0.0) || !std::isfinite(s)) {
        throw InvalidArgument("latent scale must be positive and finite");
    }
    torch::NoGradGuard guard;
    latent_scale_.fill_(s);
}

// ---------------------------------------------------------------------------------------------

ViewComponentAttentionImpl::ViewComponentAttentionImpl(int64_t channels, int64_t heads)
    : heads_(heads) {
    if (channels % heads != 0) {
        throw InvalidArgument("attention channels must be divisible by heads");
    }
    view_norm_ = register_module("view_norm", group_norm(channels));
    view_qkv_ = register_module("view_qkv", conv1(channels, 3 * channels));
    view_proj_ = register_module("view_proj", conv1(channels, channels));
    comp_norm_ = register_module("comp_norm", group_norm(channels));
    comp_qkv_ = register_module("comp_qkv", conv1(channels, 3 * channels));
    comp_proj_ = register_module("comp_proj", conv1(channels, channels));
}

torch::Tensor ViewComponentAttentionImpl::attend(const torch::Tensor& x, nn::GroupNorm& norm,
                                                 nn::Conv2d& qkv, nn::Conv2d& proj,
                                                 bool across_views, int64_t n_tasks,
                                                 int64_t n_views) {
    const int64_t ch = x.size(1);
    const int64_t hh = x.size(2);
    const int64_t ww = x.size(3);
    const int64_t tokens = hh * ww;
    const int64_t dh = ch / heads_;
    // [K, V, 3, heads, dh, L]
    auto t = qkv(norm(x)).reshape({n_tasks, n_views, 3, heads_, dh, tokens});
    torch::Tensor seq;
    if (across_views) {
        // group per task; sequence over (view, token)
        seq = t.permute({0, 2, 3, 1, 5, 4}).reshape({n_tasks, 3, heads_, n_views * tokens, dh});
    } else {
        // group per view; sequence over (task, token)
        seq = t.permute({1, 2, 3, 0, 5, 4}).reshape({n_views, 3, heads_, n_tasks * tokens, dh});
    }
    auto q = seq.select(1, 0);
    auto k = seq.select(1, 1);
    auto v = seq.select(1, 2);
    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
    auto out = torch::matmul(torch::softmax(scores, -1), v); // [G, heads, S, dh]
    if (across_views) {
        out = out.reshape({n_tasks, heads_, n_views, tokens, dh}).permute({0, 2, 1, 4, 3});
    } else {
        out = out.reshape({n_views, heads_, n_tasks, tokens, dh}).permute({2, 0, 1, 4, 3});
    }
    out = out.reshape({n_tasks * n_views, ch, hh, ww});
    return x + proj(out);
}

torch::Tensor ViewComponentAttentionImpl::forward(const torch::Tensor& x, int64_t n_tasks,
                                                  int64_t n_views) {
    auto h = attend(x, view_norm_, view_qkv_, view_proj_, true, n_tasks, n_views);
    return attend(h, comp_norm_, comp_qkv_, comp_proj_, false, n_tasks, n_views);
}

// ---------------------------------------------------------------------------------------------

DenoiserImpl::DenoiserImpl(const ModelConfig& cfg)
    : timesteps_(cfg.timesteps), width_(cfg.unet_width), levels_(cfg.unet_levels) {
    const int64_t temb = 2 * width_;
    time_fc1_ = register_module("time_fc1", nn::Linear(width_, temb));
    time_fc2_ = register_module("time_fc2", nn::Linear(temb, temb));
    task_embedding_ = register_module("task_embedding", nn::Embedding(2, temb));
    conv_in_ = register_module("conv_in", conv3(2 * cfg.latent_channels, width_));
    down_blocks_ = register_module("down_blocks", nn::ModuleList());
    down_attn_ = register_module("down_attn", nn::ModuleList());
    downsample_ = register_module("downsample", nn::ModuleList());
    std::vector<int64_t> level_ch;
    int64_t ch = width_;
    for (int64_t i = 0; i < levels_; ++i) {
        const int64_t out = width_ << i;
        down_blocks_->push_back(ResBlock(ch, out, temb));
        down_attn_->push_back(ViewComponentAttention(out, cfg.attn_heads));
        downsample_->push_back(conv3(out, out, 2));
        level_ch.push_back(out);
        ch = out;
    }
    mid1_ = register_module("mid1", ResBlock(ch, ch, temb));
    mid_attn_ = register_module("mid_attn", ViewComponentAttention(ch, cfg.attn_heads));
    mid2_ = register_module("mid2", ResBlock(ch, ch, temb));
    upsample_ = register_module("upsample", nn::ModuleList());
    up_blocks_ = register_module("up_blocks", nn::ModuleList());
    up_attn_ = register_module("up_attn", nn::ModuleList());
    for (int64_t i = levels_ - 1; i >= 0; --i) {
        const int64_t out = level_ch[static_cast<size_t>(i)];
        upsample_->push_back(conv3(ch, ch));
        up_blocks_->push_back(ResBlock(ch + out, out, temb));
        up_attn_->push_back(ViewComponentAttention(out, cfg.attn_heads));
        ch = out;
    }
    norm_out_ = register_module("norm_out", group_norm(ch));
    conv_out_ = register_module("conv_out", conv3(ch, cfg.latent_channels));
}

torch::Tensor DenoiserImpl::timestep_embedding(int64_t t, const torch::TensorOptions& opts) const {
    const int64_t half = width_ / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
    // Timesteps are normalised to a 1000-step scale so embeddings do not depend on T.
    const double scaled = 1000.0 * static_cast<double>(t) / static_cast<double>(timesteps_);
    auto args = freqs * scaled;
    auto emb = torch::cat({torch::cos(args), torch::sin(args)});
    if (emb.size(0) < width_) {
        emb = torch::cat({emb, torch::zeros({width_ - emb.size(0)}, opts)});
    }
    return emb.unsqueeze(0);
}

torch::Tensor DenoiserImpl::unet(const torch::Tensor& x, const torch::Tensor& temb, int64_t k,
                                 int64_t v) {
    auto h = conv_in_(x);
    std::vector<torch::Tensor> skips;
    for (int64_t i = 0; i < levels_; ++i) {
        h = down_blocks_[i]->as<ResBlock>()->forward(h, temb);
        h = down_attn_[i]->as<ViewComponentAttention>()->forward(h, k, v);
        skips.push_back(h);
        h = downsample_[i]->as<nn::Conv2d>()->forward(h);
    }
    h = mid1_(h, temb);
    h = mid_attn_(h, k, v);
    h = mid2_(h, temb);
    for (int64_t i = 0; i < levels_; ++i) {
        h = upsample_[i]->as<nn::Conv2d>()->forward(upsample2x(h));
        h = torch::cat({h, skips[static_cast<size_t>(levels_ - 1 - i)]}, 1);
        h = up_blocks_[i]->as<ResBlock>()->forward(h, temb);
        h = up_attn_[i]->as<ViewComponentAttention>()->forward(h, k, v);
    }
    return conv_out_(torch::silu(norm_out_(h)));
}

std::vector<int64_t> canonical_view_order(const torch::Tensor& z_t, const torch::Tensor& z_c) {
    const int64_t views = z_c.size(0);
    std::vector<std::vector<std::byte>> keys(static_cast<size_t>(views));
    auto zc = z_c.detach().to(torch::kCPU).contiguous();
    auto zt = z_t.detach().to(torch::kCPU).transpose(0, 1).contiguous(); // [V, K, ...]
    const size_t zc_bytes = static_cast<size_t>(zc[0].numel()) * zc.element_size();
    const size_t zt_bytes = static_cast<size_t>(zt[0].numel()) * zt.element_size();
    for (int64_t v = 0; v < views; ++v) {
        auto& key = keys[static_cast<size_t>(v)];
        key.resize(zc_bytes + zt_bytes);
        std::memcpy(key.data(), static_cast<const std::byte*>(zc.data_ptr()) + v * zc_bytes, zc_bytes);
        std::memcpy(key.data() + zc_bytes, static_cast<const std::byte*>(zt.data_ptr()) + v * zt_bytes,
                    zt_bytes);
    }
    std::vector<int64_t> order(static_cast<size_t>(views));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return keys[static_cast<size_t>(a)] < keys[static_cast<size_t>(b)];
    });
    return order;
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& z_t, const torch::Tensor& z_c, int64_t t,
                                    std::span<const Task> tasks) {
    if (z_t.dim() != 5 || z_c.dim() != 4) {
        throw InvalidArgument("denoiser: expected z_t [K,V,C,h,w] and z_c [V,C,h,w]");
    }
    const int64_t k = z_t.size(0);
    const int64_t v = z_t.size(1);
    if (k != static_cast<int64_t>(tasks.size()) || k < 1) {
        throw InvalidArgument("denoiser: one task per z_t slice is required");
    }
    if (z_c.size(0) != v || z_c.sizes().slice(1) != z_t.sizes().slice(2)) {
        throw InvalidArgument("denoiser: z_t and z_c are not aligned");
    }
    std::vector<int64_t> task_ids;
    for (Task task : tasks) {
        const auto id = static_cast<int64_t>(task);
        if (id != 0 && id != 1) {
            throw InvalidArgument("denoiser: unknown task");
        }
        task_ids.push_back(id);
    }
    if (t < 0 || t > timesteps_) {
        throw InvalidArgument("denoiser: timestep out of range");
    }
    if (z_t.size(3) % (int64_t{1} << levels_) != 0 || z_t.size(4) % (int64_t{1} << levels_) != 0) {
        throw InvalidArgument("denoiser: latent size must be divisible by 2^levels");
    }

    const auto order = canonical_view_order(z_t, z_c);
    std::vector<int64_t> inverse(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
        inverse[static_cast<size_t>(order[i])] = static_cast<int64_t>(i);
    }
    const auto idx_opts = torch::TensorOptions().dtype(torch::kLong).device(z_t.device());
    auto perm = torch::tensor(order, idx_opts);
    auto inv = torch::tensor(inverse, idx_opts);

    auto zt = z_t.index_select(1, perm);
    auto zc = z_c.index_select(0, perm).unsqueeze(0).expand({k, v, -1, -1, -1});
    auto x = torch::cat({zt, zc}, 2).reshape({k * v, 2 * z_c.size(1), z_t.size(3), z_t.size(4)});

    const auto opts = z_t.options();
    auto temb = time_fc2_(torch::silu(time_fc1_(timestep_embedding(t, opts))));
    auto task_emb = task_embedding_(torch::tensor(task_ids, idx_opts));
    auto cond = (temb + task_emb).repeat_interleave(v, 0); // [K*V, temb]

    auto out = unet(x, cond, k, v).reshape(z_t.sizes());
    ++forward_count_;
    return out.index_select(1, inv);
}

// ---------------------------------------------------------------------------------------------

ResidualDenseBlockImpl::ResidualDenseBlockImpl(int64_t features, int64_t growth, int64_t layers) {
    convs_ = register_module("convs", nn::ModuleList());
    for (int64_t i = 0; i < layers; ++i) {
        convs_->push_back(conv3(features + i * growth, growth));
    }
    fuse_ = register_module("fuse", conv1(features + layers * growth, features));
}

torch::Tensor ResidualDenseBlockImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> feats{x};
    for (const auto& conv : *convs_) {
        feats.push_back(torch::relu(conv->as<nn::Conv2d>()->forward(torch::cat(feats, 1))));
    }
    return x + fuse_(torch::cat(feats, 1));
}

InjectionSiteImpl::InjectionSiteImpl(int64_t enc_ch, int64_t dec_ch, const ModelConfig& cfg) {
    const int64_t f = cfg.din_features;
    head_ = register_module("head", conv3(enc_ch + dec_ch, f));
    rdbs_ = register_module("rdbs", nn::ModuleList());
    for (int64_t i = 0; i < cfg.din_rdbs; ++i) {
        rdbs_->push_back(ResidualDenseBlock(f, cfg.din_growth, cfg.din_layers));
    }
    global_fuse_ = register_module("global_fuse", conv1(cfg.din_rdbs * f, f));
    global_conv_ = register_module("global_conv", conv3(f, f));
    out_ = register_module("out", conv3(f, dec_ch));
    torch::NoGradGuard guard;
    out_->weight.zero_();
    out_->bias.zero_();
}

torch::Tensor InjectionSiteImpl::forward(const torch::Tensor& enc_feature,
                                         const torch::Tensor& dec_feature) {
    auto f0 = head_(torch::cat({enc_feature, dec_feature}, 1));
    std::vector<torch::Tensor> outs;
    auto h = f0;
    for (const auto& rdb : *rdbs_) {
        h = rdb->as<ResidualDenseBlock>()->forward(h);
        outs.push_back(h);
    }
    auto g = global_conv_(global_fuse_(torch::cat(outs, 1))) + f0;
    return out_(g);
}

DetailInjectorImpl::DetailInjectorImpl(const ModelConfig& cfg) {
    const int64_t ch = cfg.ae_widths[0];
    site0_ = register_module("site0", InjectionSite(ch, ch, cfg));
    site1_ = register_module("site1", InjectionSite(ch, ch, cfg));
}

torch::Tensor DetailInjectorImpl::inject(int site, const torch::Tensor& enc_feature,
                                         const torch::Tensor& dec_feature) {
    if (enc_feature.sizes() != dec_feature.sizes()) {
        throw InvalidArgument("detail injection: encoder/decoder features differ in shape");
    }
    auto& s = site == 0 ? site0_ : site1_;
    return s(enc_feature, dec_feature) + dec_feature;
}

torch::Tensor decode_with_din(Autoencoder& ae, DetailInjector& din, const torch::Tensor& latents,
                              const torch::Tensor& condition_images) {
    if (latents.dim() != 4 || condition_images.dim() != 4 ||
        latents.size(0) != condition_images.size(0) ||
        latents.size(2) * 8 != condition_images.size(2) ||
        latents.size(3) * 8 != condition_images.size(3)) {
        throw InvalidArgument("decode_with_din: condition images must be 8x the latent resolution");
    }
    const auto taps = ae->encoder_taps(condition_images);
    return ae->decode_hooked(latents, [&](int site, const torch::Tensor& feature) {
        return din->inject(site, taps[static_cast<size_t>(DetailInjectorImpl::encoder_tap_for_site(site))],
                           feature);
    });
}

// ---------------------------------------------------------------------------------------------

std::string to_string(Stage stage) {
    switch (stage) {
    case Stage::autoencoder: return "autoencoder";
    case Stage::multistep: return "multistep";
    case Stage::onestep: return "onestep";
    case Stage::din: return "din";
    }
    return "unknown";
}

Stage stage_from_string(const std::string& name) {
    for (Stage s : {Stage::autoencoder, Stage::multistep, Stage::onestep, Stage::din}) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw InvalidArgument("unknown stage '" + name + "'");
}

ModelBundle ModelBundle::create(const ModelConfig& cfg, uint64_t seed) {
    torch::manual_seed(seed);
    ModelBundle b;
    b.config = cfg;
    b.schedule = make_schedule(cfg.timesteps, cfg.base_schedule);
    b.autoencoder = Autoencoder(cfg);
    b.denoiser = Denoiser(cfg);
    b.din = DetailInjector(cfg);
    return b;
}

bool ModelBundle::has(Stage s) const {
    return std::find(completed.begin(), completed.end(), s) != completed.end();
}

void ModelBundle::set_eval() {
    autoencoder->eval();
    denoiser->eval();
    din->eval();
}

std::string parameter_hash(const torch::nn::Module& module) {
    Sha256 h;
    auto feed = [&](const std::string& name, const torch::Tensor& t) {
        auto c = t.detach().to(torch::kCPU).contiguous();
        h.update(name.data(), name.size());
        h.update(c.data_ptr(), static_cast<size_t>(c.numel()) * c.element_size());
    };
    for (const auto& p : module.named_parameters(true)) {
        feed(p.key(), p.value());
    }
    for (const auto& b : module.named_buffers(true)) {
        feed(b.key(), b.value());
    }
    return h.hex_digest();
}

namespace {

const char* module_for(Stage stage) {
    switch (stage) {
    case Stage::autoencoder: return "autoencoder";
    case Stage::din: return "din";
    default: return "denoiser";
    }
}

} // namespace

CheckpointInfo save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& stem,
                               int64_t step, Stage stage) {
    CheckpointInfo info;
    info.weights = stem;
    info.weights += ".pt";
    info.sidecar = stem;
    info.sidecar += ".json";
    info.step = step;
    info.stage = stage;

    torch::serialize::OutputArchive root;
    torch::serialize::OutputArchive ae, dn, din;
    bundle.autoencoder->save(ae);
    bundle.denoiser->save(dn);
    bundle.din->save(din);
    root.write("autoencoder", ae);
    root.write("denoiser", dn);
    root.write("din", din);
    try {
        root.save_to(info.weights.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot write checkpoint '" + info.weights.string() + "': " + e.what_without_backtrace());
    }

    nlohmann::json stages = nlohmann::json::array();
    for (Stage s : bundle.completed) {
        stages.push_back(to_string(s));
    }
    nlohmann::json side = {
        {"schema", 1},
        {"module", module_for(stage)},
        {"stage", to_string(stage)},
        {"step", step},
        {"config_sha256", bundle.config.sha256()},
        {"model_config", bundle.config.to_json()},
        {"weights_sha256", sha256_file(info.weights)},
        {"completed_stages", stages},
        {"from_scratch_onestep", bundle.from_scratch_onestep},
    };
    write_text_file(info.sidecar, side.dump(2) + "\n");
    return info;
}

ModelBundle load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    auto weights = path;
    auto sidecar = path;
    if (path.extension() == ".json") {
        weights.replace_extension(".pt");
    } else {
        sidecar.replace_extension(".json");
    }
    if (!std::filesystem::exists(weights) || !std::filesystem::exists(sidecar)) {
        throw IoError("checkpoint '" + path.string() + "' not found (need .pt and .json)");
    }
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(read_text_file(sidecar));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("unreadable checkpoint sidecar: " + std::string(e.what()));
    }
    if (side.value("schema", 0) != 1) {
        throw IntegrityError("unsupported checkpoint schema in '" + sidecar.string() + "'");
    }
    const auto cfg = ModelConfig::from_json(side.at("model_config"));
    if (cfg.sha256() != side.value("config_sha256", std::string())) {
        throw IntegrityError("checkpoint config hash mismatch in '" + sidecar.string() + "'");
    }
    if (expected != nullptr && expected->sha256() != cfg.sha256()) {
        throw IntegrityError("checkpoint was trained with a different model config");
    }
    if (sha256_file(weights) != side.value("weights_sha256", std::string())) {
        throw IntegrityError("checkpoint weights hash mismatch for '" + weights.string() + "'");
    }

    ModelBundle b = ModelBundle::create(cfg, 0);
    torch::serialize::InputArchive root;
    try {
        root.load_from(weights.string());
        torch::serialize::InputArchive ae, dn, din;
        root.read("autoencoder", ae);
        root.read("denoiser", dn);
        root.read("din", din);
        b.autoencoder->load(ae);
        b.denoiser->load(dn);
        b.din->load(din);
    } catch (const c10::Error& e) {
        throw IntegrityError("cannot deserialize '" + weights.string() + "': " + e.what_without_backtrace());
    }
    for (const auto& s : side.at("completed_stages")) {
        b.completed.push_back(stage_from_string(s.get<std::string>()));
    }
    b.from_scratch_onestep = side.value("from_scratch_onestep", false);
    return b;
}

} // namespace matdiff
