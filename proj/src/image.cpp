// SPDX-License-Identifier: Apache-2.0
#include "matdiff/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

#include "matdiff/errors.hpp"

namespace matdiff {

torch::Tensor to_tensor(const Image& img) {
    auto hwc = torch::from_blob(const_cast<float*>(img.data.data()),
                                {img.height, img.width, img.channels}, torch::kFloat32);
    return hwc.permute({2, 0, 1}).contiguous().clone();
}

Image from_tensor(const torch::Tensor& chw) {
    if (chw.dim() != 3) {
        throw InvalidArgument("from_tensor: expected [C,H,W]");
    }
    auto hwc = chw.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
    Image img(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(2)),
              static_cast<int>(chw.size(0)));
    std::copy_n(hwc.data_ptr<float>(), img.data.size(), img.data.begin());
    return img;
}

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

} // namespace

void write_png(const std::filesystem::path& path, const Image& img, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) {
        throw InvalidArgument("write_png: bit depth must be 8 or 16");
    }
    if (img.channels != 1 && img.channels != 3) {
        throw InvalidArgument("write_png: only gray or RGB images are supported");
    }
    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing '" + path.string() + "'");
    }
    png_init_io(png, file.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 bit_depth, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const double max_value = bit_depth == 8 ? 255.0 : 65535.0;
    const size_t bytes_per_sample = bit_depth / 8;
    std::vector<png_byte> row(static_cast<size_t>(img.width) * img.channels * bytes_per_sample);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::clamp(static_cast<double>(img.at(y, x, c)), 0.0, 1.0);
                const auto q = static_cast<uint32_t>(std::lround(v * max_value));
                const size_t i = (static_cast<size_t>(x) * img.channels + c) * bytes_per_sample;
                if (bit_depth == 8) {
                    row[i] = static_cast<png_byte>(q);
                } else {
                    row[i] = static_cast<png_byte>(q >> 8); // PNG is big-endian
                    row[i + 1] = static_cast<png_byte>(q & 0xFF);
                }
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.string().c_str(), "rb"));
    if (!file) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG '" + path.string() + "'");
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if ((color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB) || (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unsupported PNG layout in '" + path.string() + "'");
    }
    const int channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const size_t bytes_per_sample = depth / 8;
    const double max_value = depth == 8 ? 255.0 : 65535.0;
    Image img(height, width, channels);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                const size_t i = (static_cast<size_t>(x) * channels + c) * bytes_per_sample;
                const uint32_t q = depth == 8 ? row[i] : (static_cast<uint32_t>(row[i]) << 8) | row[i + 1];
                img.at(y, x, c) = static_cast<float>(q / max_value);
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 initialisation failed");
    }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(const void* data, size_t size) {
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size);
}

std::string Sha256::hex_digest() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::string sha256_hex(std::span<const std::byte> bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex_digest();
}

std::string sha256_hex(const std::string& text) {
    Sha256 h;
    h.update(text.data(), text.size());
    return h.hex_digest();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    Sha256 h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<size_t>(in.gcount()));
    }
    return h.hex_digest();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!out) {
        throw IoError("failed writing '" + path.string() + "'");
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace matdiff
