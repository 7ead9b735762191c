#include "regiondiff/image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <memory>

namespace regiondiff {

namespace {

void put_u32be(Bytes& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_u32le(Bytes& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint32_t get_u32le(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

Bytes write_png(std::uint32_t format, int width, int height, const void* pixels) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels, 0, nullptr)) {
        throw ImageError(std::string("PNG encode failed: ") + img.message);
    }
    Bytes out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, nullptr)) {
        throw ImageError(std::string("PNG encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

// Returns pixels in `format` plus the image size.
Bytes read_png(std::span<const std::uint8_t> png, std::uint32_t format, int& width, int& height) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, png.data(), png.size())) {
        throw ImageError(std::string("PNG decode failed: ") + img.message);
    }
    img.format = format;
    Bytes pixels(PNG_IMAGE_SIZE(img));
    png_color black{0, 0, 0};
    if (!png_image_finish_read(&img, &black, pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw ImageError(std::string("PNG decode failed: ") + img.message);
    }
    width = static_cast<int>(img.width);
    height = static_cast<int>(img.height);
    return pixels;
}

struct Chunk {
    std::string type;
    std::span<const std::uint8_t> data;
};

std::vector<Chunk> split_chunks(const Bytes& png) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (png.size() < 8 || std::memcmp(png.data(), sig, 8) != 0) {
        throw ImageError("not a PNG stream");
    }
    std::vector<Chunk> chunks;
    std::size_t pos = 8;
    while (pos + 12 <= png.size()) {
        const std::uint32_t len = get_u32be(&png[pos]);
        if (pos + 12 + len > png.size()) {
            throw ImageError("truncated PNG chunk");
        }
        chunks.push_back({std::string(reinterpret_cast<const char*>(&png[pos + 4]), 4),
                          std::span<const std::uint8_t>(&png[pos + 8], len)});
        pos += 12 + len;
    }
    return chunks;
}

void put_chunk(Bytes& out, const char* type, const Bytes& data) {
    put_u32be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

Bytes encode_png(const RgbImage& image) {
    const auto rgb = to_rgb8(image);
    return write_png(PNG_FORMAT_RGB, image.width, image.height, rgb.data());
}

RgbImage decode_png_rgb(std::span<const std::uint8_t> png) {
    int w = 0, h = 0;
    const Bytes px = read_png(png, PNG_FORMAT_RGB, w, h);
    RgbImage out(h, w);
    for (std::size_t k = 0; k < px.size(); ++k) out.data[k] = static_cast<float>(px[k]) / 255.0f;
    return out;
}

Bytes encode_png_gray(const Grid<std::uint8_t>& gray) {
    return write_png(PNG_FORMAT_GRAY, gray.width, gray.height, gray.data.data());
}

Grid<std::uint8_t> decode_png_gray(std::span<const std::uint8_t> png) {
    int w = 0, h = 0;
    Bytes px = read_png(png, PNG_FORMAT_GRAY, w, h);
    Grid<std::uint8_t> out(h, w);
    out.data = std::move(px);
    return out;
}

Bytes encode_apng_gray(const std::vector<Grid<std::uint8_t>>& frames) {
    if (frames.empty()) {
        throw ImageError("APNG needs at least one frame");
    }
    for (const auto& f : frames) {
        if (!f.same_shape(frames.front())) {
            throw ShapeError("APNG frames differ in size");
        }
    }
    const auto w = static_cast<std::uint32_t>(frames.front().width);
    const auto h = static_cast<std::uint32_t>(frames.front().height);

    Bytes out = {137, 80, 78, 71, 13, 10, 26, 10};
    std::uint32_t seq = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const Bytes single = encode_png_gray(frames[f]);
        const auto chunks = split_chunks(single);
        if (f == 0) {
            put_chunk(out, "IHDR", Bytes(chunks.front().data.begin(), chunks.front().data.end()));
            Bytes actl;
            put_u32be(actl, static_cast<std::uint32_t>(frames.size()));
            put_u32be(actl, 0);  // loop forever
            put_chunk(out, "acTL", actl);
        }
        Bytes fctl;
        put_u32be(fctl, seq++);
        put_u32be(fctl, w);
        put_u32be(fctl, h);
        put_u32be(fctl, 0);
        put_u32be(fctl, 0);
        fctl.insert(fctl.end(), {0, 1, 0, 2, 0, 0});  // 1/2 s per frame, no dispose/blend
        put_chunk(out, "fcTL", fctl);
        for (const auto& c : chunks) {
            if (c.type != "IDAT") continue;
            if (f == 0) {
                put_chunk(out, "IDAT", Bytes(c.data.begin(), c.data.end()));
            } else {
                Bytes fdat;
                put_u32be(fdat, seq++);
                fdat.insert(fdat.end(), c.data.begin(), c.data.end());
                put_chunk(out, "fdAT", fdat);
            }
        }
    }
    put_chunk(out, "IEND", {});
    return out;
}

Bytes encode_mask_stack(const QuantizedMaskStack& stack) {
    std::vector<Grid<std::uint8_t>> frames;
    for (int i = stack.steps(); i >= 1; --i) {
        const Mask& m = stack.at_step(i);
        Grid<std::uint8_t> g(m.height, m.width);
        for (std::size_t k = 0; k < m.data.size(); ++k) g.data[k] = m.data[k] > 0.5f ? 255 : 0;
        frames.push_back(std::move(g));
    }
    return encode_apng_gray(frames);
}

Bytes encode_latent_dump(const LatentCanvas& latent) {
    Bytes out = {'S', 'M', 'D', 'L'};
    put_u32le(out, static_cast<std::uint32_t>(latent.height));
    put_u32le(out, static_cast<std::uint32_t>(latent.width));
    put_u32le(out, static_cast<std::uint32_t>(latent.channels));
    for (float v : latent.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32le(out, bits);
    }
    return out;
}

LatentCanvas decode_latent_dump(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "SMDL", 4) != 0) {
        throw ImageError("not a latent dump");
    }
    const std::uint32_t h = get_u32le(&bytes[4]), w = get_u32le(&bytes[8]), d = get_u32le(&bytes[12]);
    const std::uint64_t n = std::uint64_t{h} * w * d;
    if (h > 1u << 16 || w > 1u << 16 || d > 64 || bytes.size() != 16 + 4 * n) {
        throw ImageError("latent dump size does not match its header");
    }
    LatentCanvas out(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint32_t bits = get_u32le(&bytes[16 + 4 * k]);
        std::memcpy(&out.data[k], &bits, 4);
    }
    return out;
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ImageError("cannot open " + path.string());
    }
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ImageError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw ImageError("write failed for " + path.string());
    }
}

}  // namespace regiondiff
