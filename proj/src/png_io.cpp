#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "vicp/image.hpp"

// Minimal PNG codec: 8-bit/channel RGB, no interlace. The writer emits
// filter-0 scanlines; the reader handles all five standard filters so files
// from other tools remain loadable.
namespace vicp::png_io {

namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>(v & 0xff));
}

std::uint32_t read_u32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_rgb8(const std::string& path, const Image& img) {
    if (img.channels != 3) throw IoError("write_rgb8: expected 3 channels, got " + std::to_string(img.channels));
    const int h = img.height, w = img.width;

    // Filter byte 0 per scanline, RGB interleaved.
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (1 + 3 * w));
    std::size_t k = 0;
    for (int y = 0; y < h; ++y) {
        raw[k++] = 0;
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                raw[k++] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("write_rgb8: deflate failed for " + path);
    comp.resize(comp_len);

    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace

    std::vector<unsigned char> out(kSignature, kSignature + 8);
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", comp);
    append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_rgb8: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write_rgb8: short write to " + path);
}

Image read_rgb8(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_rgb8: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kSignature, 8) != 0)
        throw IoError("read_rgb8: not a PNG file: " + path);

    std::size_t pos = 8;
    int w = 0, h = 0;
    bool have_ihdr = false;
    std::vector<unsigned char> idat;
    while (pos + 8 <= buf.size()) {
        std::uint32_t len = read_u32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw IoError("read_rgb8: truncated chunk in " + path);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const unsigned char* payload = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("read_rgb8: bad IHDR in " + path);
            w = static_cast<int>(read_u32(payload));
            h = static_cast<int>(read_u32(payload + 4));
            if (payload[8] != 8 || payload[9] != 2 || payload[12] != 0)
                throw IoError("read_rgb8: unsupported PNG variant (need 8-bit RGB, no interlace): " + path);
            have_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!have_ihdr || w <= 0 || h <= 0) throw IoError("read_rgb8: missing IHDR in " + path);

    const std::size_t stride = 3 * static_cast<std::size_t>(w);
    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (1 + stride));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("read_rgb8: inflate failed for " + path);

    // Undo scanline filters in place (3-byte pixels).
    std::vector<unsigned char> prev(stride, 0);
    Image img(3, h, w);
    for (int y = 0; y < h; ++y) {
        unsigned char* line = raw.data() + static_cast<std::size_t>(y) * (1 + stride) + 1;
        const int filter = line[-1];
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= 3 ? line[i - 3] : 0;
            const int b = prev[i];
            const int c = i >= 3 ? prev[i - 3] : 0;
            int v = line[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw IoError("read_rgb8: bad filter byte in " + path);
            }
            line[i] = static_cast<unsigned char>(v & 0xff);
        }
        std::memcpy(prev.data(), line, stride);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = line[3 * x + c] / 255.0;
    }
    return img;
}

}  // namespace vicp::png_io

namespace vicp {

Eigen::MatrixXd extract_patches(const Image& img, int patch_size) {
    if (patch_size <= 0 || img.height % patch_size != 0 || img.width % patch_size != 0)
        throw ShapeError("extract_patches: image size not divisible by patch size");
    const int gh = img.height / patch_size;
    const int gw = img.width / patch_size;
    const int dim = img.channels * patch_size * patch_size;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(gh) * gw, dim);
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            Eigen::Index row = static_cast<Eigen::Index>(py) * gw + px;
            int k = 0;
            for (int c = 0; c < img.channels; ++c)
                for (int dy = 0; dy < patch_size; ++dy)
                    for (int dx = 0; dx < patch_size; ++dx)
                        out(row, k++) = img.at(c, py * patch_size + dy, px * patch_size + dx);
        }
    return out;
}

}  // namespace vicp
