#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "vicp/errors.hpp"

namespace vicp {

// CHW image with values in [0,1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;  // channels*height*width, channel-major

    Image() = default;
    Image(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    Image hflip() const {
        Image out(channels, height, width);
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x) out.at(c, y, x) = at(c, y, width - 1 - x);
        return out;
    }
};

namespace png_io {

// 8-bit RGB only, non-interlaced. Values are quantized with round(v*255).
void write_rgb8(const std::string& path, const Image& img);
Image read_rgb8(const std::string& path);

}  // namespace png_io

// Row-major patch matrix: one row per patch, flattened channel-major.
Eigen::MatrixXd extract_patches(const Image& img, int patch_size);

}  // namespace vicp
