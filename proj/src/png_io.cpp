#include "nledn/png_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "nledn/error.hpp"

namespace nledn {

namespace {

constexpr std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t be32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in,
                                       std::size_t expected_size, const std::string& path) {
    std::vector<std::uint8_t> out(expected_size);
    uLongf dest_len = static_cast<uLongf>(expected_size);
    const int rc = uncompress(out.data(), &dest_len, in.data(), static_cast<uLong>(in.size()));
    if (rc != Z_OK || dest_len != expected_size) {
        throw Error("png: corrupt compressed image data in " + path);
    }
    return out;
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& in) {
    uLongf bound = compressBound(static_cast<uLong>(in.size()));
    std::vector<std::uint8_t> out(bound);
    const int rc = compress2(out.data(), &bound, in.data(), static_cast<uLong>(in.size()), 6);
    if (rc != Z_OK) throw Error("png: deflate failed");
    out.resize(bound);
    return out;
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::uint8_t* data, std::size_t len) {
    put_be32(out, static_cast<std::uint32_t>(len));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, out.data() + start, static_cast<uInt>(4 + len)));
    put_be32(out, crc);
}

}  // namespace

RgbImage read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("png: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
        throw Error("png: " + path + " is not a PNG file");
    }

    int width = 0, height = 0;
    bool have_header = false;
    std::vector<std::uint8_t> idat;

    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t len = be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw Error("png: truncated chunk in " + path);
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const std::uint8_t* data = &bytes[pos + 8];
        const std::uint32_t stored_crc = be32(&bytes[pos + 8 + len]);
        const std::uint32_t actual_crc = static_cast<std::uint32_t>(
            crc32(0L, &bytes[pos + 4], static_cast<uInt>(4 + len)));
        if (stored_crc != actual_crc) throw Error("png: chunk CRC mismatch in " + path);

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw Error("png: bad IHDR in " + path);
            width = static_cast<int>(be32(data));
            height = static_cast<int>(be32(data + 4));
            const int bit_depth = data[8], color_type = data[9];
            const int interlace = data[12];
            if (bit_depth != 8) {
                throw Error("png: " + path + " has unsupported bit depth " +
                            std::to_string(bit_depth) + " (only 8-bit RGB is supported)");
            }
            if (color_type != 2) {
                throw Error("png: " + path + " has color type " + std::to_string(color_type) +
                            "; only non-paletted RGB (type 2) is supported");
            }
            if (interlace != 0) throw Error("png: " + path + " is interlaced; not supported");
            if (width < 1 || height < 1 || width > 16384 || height > 16384) {
                throw Error("png: implausible dimensions " + std::to_string(width) + "x" +
                            std::to_string(height) + " in " + path);
            }
            have_header = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!have_header || idat.empty()) throw Error("png: missing image data in " + path);

    const std::size_t stride = static_cast<std::size_t>(width) * 3;
    const std::size_t raw_size = (stride + 1) * static_cast<std::size_t>(height);
    std::vector<std::uint8_t> raw = zlib_inflate(idat, raw_size, path);

    RgbImage img;
    img.width = width;
    img.height = height;
    img.pixels.resize(stride * static_cast<std::size_t>(height));

    std::vector<std::uint8_t> prev(stride, 0);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t* src = &raw[static_cast<std::size_t>(y) * (stride + 1)];
        const int filter = src[0];
        ++src;
        std::uint8_t* dst = &img.pixels[static_cast<std::size_t>(y) * stride];
        for (std::size_t i = 0; i < stride; ++i) {
            const int left = i >= 3 ? dst[i - 3] : 0;
            const int up = prev[i];
            const int up_left = i >= 3 ? prev[i - 3] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, up_left); break;
                default: throw Error("png: unknown filter type in " + path);
            }
            dst[i] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return img;
}

void write_png(const std::string& path, const RgbImage& image) {
    if (image.width < 1 || image.height < 1 ||
        image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw Error("png: invalid image buffer for " + path);
    }

    const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0);  // filter: none
        const std::uint8_t* row = &image.pixels[static_cast<std::size_t>(y) * stride];
        raw.insert(raw.end(), row, row + stride);
    }
    std::vector<std::uint8_t> compressed = zlib_deflate(raw);

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kSignature, kSignature + 8);

    std::uint8_t ihdr[13];
    ihdr[0] = static_cast<std::uint8_t>(image.width >> 24);
    ihdr[1] = static_cast<std::uint8_t>(image.width >> 16);
    ihdr[2] = static_cast<std::uint8_t>(image.width >> 8);
    ihdr[3] = static_cast<std::uint8_t>(image.width);
    ihdr[4] = static_cast<std::uint8_t>(image.height >> 24);
    ihdr[5] = static_cast<std::uint8_t>(image.height >> 16);
    ihdr[6] = static_cast<std::uint8_t>(image.height >> 8);
    ihdr[7] = static_cast<std::uint8_t>(image.height);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter method
    ihdr[12] = 0;  // no interlace
    append_chunk(out, "IHDR", ihdr, sizeof(ihdr));
    append_chunk(out, "IDAT", compressed.data(), compressed.size());
    append_chunk(out, "IEND", nullptr, 0);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("png: cannot write " + tmp);
        f.write(reinterpret_cast<const char*>(out.data()),
                static_cast<std::streamsize>(out.size()));
        if (!f) throw Error("png: short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw Error("png: cannot move " + tmp + " into place");
    }
}

}  // namespace nledn
