// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "dreamreader/errors.hpp"

namespace dreamreader {

namespace {

void check_image(const Tensor& t) {
    require(t.rank() == 3 && t.shape[0] == 3, Errc::shape_mismatch,
            "expected (3, h, w) image, got " + shape_str(t.shape));
}

uint8_t quantize(float v) {
    const float mapped = (v * 0.5f + 0.5f) * 255.0f;
    const float clamped = std::min(255.0f, std::max(0.0f, mapped));
    return static_cast<uint8_t>(std::lround(clamped));
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
    check_image(image);
    const int h = image.shape[1], w = image.shape[2];
    std::ofstream out(path, std::ios::binary);
    require(out.good(), Errc::io_failure, "cannot open " + path + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<size_t>(x * 3 + c)] =
                    quantize(image.data[static_cast<size_t>((c * h + y) * w + x)]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    require(out.good(), Errc::io_failure, "short write to " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_failure, "cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    require(magic == "P6" && maxval == 255 && w > 0 && h > 0, Errc::corrupt_header,
            path + " is not an 8-bit P6 PPM");
    in.get();  // single whitespace byte after the header
    std::vector<uint8_t> bytes(static_cast<size_t>(w) * static_cast<size_t>(h) * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(in.gcount() == static_cast<std::streamsize>(bytes.size()), Errc::truncated_body,
            path + " is shorter than its header promises");
    Tensor t = Tensor::zeros({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.data[static_cast<size_t>((c * h + y) * w + x)] =
                    (static_cast<float>(bytes[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f -
                     0.5f) *
                    2.0f;
    return t;
}

Tensor image_grid(const std::vector<Tensor>& images) {
    require(!images.empty(), Errc::empty_set, "image_grid of zero images");
    for (const Tensor& t : images) {
        check_image(t);
        require(t.same_shape(images.front()), Errc::shape_mismatch,
                "image_grid needs equally shaped images");
    }
    const int h = images.front().shape[1], w = images.front().shape[2];
    const int n = static_cast<int>(images.size());
    Tensor out = Tensor::zeros({3, h, w * n});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out.data[static_cast<size_t>((c * h + y) * (w * n) + i * w + x)] =
                        images[static_cast<size_t>(i)]
                            .data[static_cast<size_t>((c * h + y) * w + x)];
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    require(!rows.empty(), Errc::empty_set, "stack_rows of zero grids");
    const int w = rows.front().shape[2];
    int total_h = 0;
    for (const Tensor& t : rows) {
        check_image(t);
        require(t.shape[2] == w, Errc::shape_mismatch, "stack_rows needs equal widths");
        total_h += t.shape[1];
    }
    Tensor out = Tensor::zeros({3, total_h, w});
    int y0 = 0;
    for (const Tensor& t : rows) {
        const int h = t.shape[1];
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out.data[static_cast<size_t>((c * total_h + y0 + y) * w + x)] =
                        t.data[static_cast<size_t>((c * h + y) * w + x)];
        y0 += h;
    }
    return out;
}

}  // namespace dreamreader
