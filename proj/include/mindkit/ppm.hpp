#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "mindkit/tensor.hpp"

namespace mindkit {

// Binary PPM (P6, 8-bit). Images are (H x W x 3) floats in [0,1]; the byte
// mapping is round(v*255), so palette colors chosen on the 1/255 grid
// round-trip exactly.

inline void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.shape[2] != 3)
        throw BadResolution("write_ppm expects (H x W x 3), got " + shape_str(img.shape));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOFailure("cannot write " + path);
    out << "P6\n" << img.shape[1] << " " << img.shape[0] << "\n255\n";
    for (float v : img.data) {
        float c = std::clamp(v, 0.0f, 1.0f);
        out.put(static_cast<char>(static_cast<int>(std::lround(c * 255.0f))));
    }
    if (!out) throw IOFailure("short write: " + path);
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot read " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw IOFailure("not a P6 ppm: " + path);
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255) throw IOFailure("unsupported ppm header in " + path);
    in.get();  // single whitespace after maxval
    std::vector<float> data(static_cast<size_t>(h) * w * 3);
    for (auto& v : data) {
        int byte = in.get();
        if (byte < 0) throw IOFailure("truncated ppm: " + path);
        v = static_cast<float>(byte) / 255.0f;
    }
    return Tensor({h, w, 3}, std::move(data));
}

}  // namespace mindkit
