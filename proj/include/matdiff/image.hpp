// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace matdiff {

/// Interleaved float image, row-major HWC.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// [C, H, W] float32 tensor from an HWC image.
torch::Tensor to_tensor(const Image& img);
/// Inverse of to_tensor; accepts any floating dtype.
Image from_tensor(const torch::Tensor& chw);

// PNG codecs. Values map linearly [0,1] <-> [0, 2^bits - 1] and are clamped first.
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth);
/// Reads 8- or 16-bit gray/RGB PNGs into [0,1] floats.
Image read_png(const std::filesystem::path& path);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

/// Incremental SHA-256.
class Sha256 {
  public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;
    void update(const void* data, size_t size);
    std::string hex_digest();

  private:
    void* ctx_;
};

/// Writes `text` to `path`, throwing IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

} // namespace matdiff
