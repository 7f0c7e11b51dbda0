#include "gangeal/image_io.hpp"

#include "gangeal/binary.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <csetjmp>
#include <jpeglib.h>
#include <stdexcept>

namespace gangeal {

namespace {

struct PngReadState {
    const std::string* bytes;
    size_t pos;
};

void png_read_bytes(png_structp png, png_bytep out, png_size_t n) {
    auto* s = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (s->pos + n > s->bytes->size()) {
        png_error(png, "truncated PNG");
    }
    std::memcpy(out, s->bytes->data() + s->pos, n);
    s->pos += n;
}

void png_write_bytes(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), n);
}

void png_flush_noop(png_structp) {}

void png_throw(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }

void png_warn(png_structp, png_const_charp) {}

Image8 decode_png(const std::string& bytes) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
    if (!png) throw std::runtime_error("png: cannot allocate reader");
    png_infop info = png_create_info_struct(png);
    Image8 img;
    try {
        PngReadState state{&bytes, 0};
        png_set_read_fn(png, &state, png_read_bytes);
        png_read_info(png, info);
        const auto color = png_get_color_type(png, info);
        const auto depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        png_read_update_info(png, info);
        img.width = static_cast<int>(png_get_image_width(png, info));
        img.height = static_cast<int>(png_get_image_height(png, info));
        img.channels = png_get_channels(png, info);
        img.data.resize(static_cast<size_t>(img.width) * img.height * img.channels);
        std::vector<png_bytep> rows(img.height);
        for (int y = 0; y < img.height; ++y) rows[y] = img.data.data() + static_cast<size_t>(y) * img.width * img.channels;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

Image8 decode_jpeg(const std::string& bytes) {
    jpeg_decompress_struct cinfo{};
    JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_error_exit;
    Image8 img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error(std::string("jpeg: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img.width = static_cast<int>(cinfo.output_width);
    img.height = static_cast<int>(cinfo.output_height);
    img.channels = cinfo.output_components;
    img.data.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.data.data() + static_cast<size_t>(cinfo.output_scanline) * img.width * img.channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

} // namespace

Image8 decode_image(const std::string& bytes) {
    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xff &&
        static_cast<unsigned char>(bytes[1]) == 0xd8) {
        return decode_jpeg(bytes);
    }
    throw std::runtime_error("unsupported image format (expected PNG or JPEG)");
}

std::string encode_png(const Image8& image) {
    if (image.width <= 0 || image.height <= 0) throw std::invalid_argument("encode_png: empty image");
    int color = 0;
    switch (image.channels) {
    case 1: color = PNG_COLOR_TYPE_GRAY; break;
    case 3: color = PNG_COLOR_TYPE_RGB; break;
    case 4: color = PNG_COLOR_TYPE_RGB_ALPHA; break;
    default: throw std::invalid_argument("encode_png: unsupported channel count");
    }
    if (image.data.size() != static_cast<size_t>(image.width) * image.height * image.channels) {
        throw std::invalid_argument("encode_png: pixel buffer size mismatch");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_warn);
    if (!png) throw std::runtime_error("png: cannot allocate writer");
    png_infop info = png_create_info_struct(png);
    std::string out;
    try {
        png_set_write_fn(png, &out, png_write_bytes, png_flush_noop);
        png_set_IHDR(png, info, image.width, image.height, 8, color, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < image.height; ++y) {
            png_write_row(png, const_cast<png_bytep>(image.data.data() + static_cast<size_t>(y) * image.width * image.channels));
        }
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

Image8 read_image8(const std::filesystem::path& path) { return decode_image(read_file(path)); }

void write_png(const std::filesystem::path& path, const Image8& image) { write_file(path, encode_png(image)); }

torch::Tensor image_to_tensor(const Image8& image) {
    auto t = torch::from_blob(const_cast<uint8_t*>(image.data.data()), {image.height, image.width, image.channels},
                              torch::kUInt8)
                 .to(torch::kFloat32)
                 .permute({2, 0, 1})
                 .contiguous();
    t = t / 127.5f - 1.0f;
    if (image.channels == 1) t = t.expand({3, image.height, image.width}).contiguous();
    return t.unsqueeze(0);
}

Image8 tensor_to_image(const torch::Tensor& t) {
    auto x = t.detach();
    if (x.dim() == 4) {
        if (x.size(0) != 1) throw std::invalid_argument("tensor_to_image: expected a single image");
        x = x[0];
    }
    if (x.dim() != 3 || (x.size(0) != 1 && x.size(0) != 3 && x.size(0) != 4)) {
        throw std::invalid_argument("tensor_to_image: expected [C, H, W] with 1, 3 or 4 channels");
    }
    auto bytes = ((x.to(torch::kFloat32).clamp(-1, 1) + 1) * 127.5f).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    Image8 img;
    img.channels = static_cast<int>(x.size(0));
    img.height = static_cast<int>(x.size(1));
    img.width = static_cast<int>(x.size(2));
    img.data.assign(bytes.data_ptr<uint8_t>(), bytes.data_ptr<uint8_t>() + bytes.numel());
    return img;
}

torch::Tensor read_image(const std::filesystem::path& path) { return image_to_tensor(read_image8(path)); }

void write_image(const std::filesystem::path& path, const torch::Tensor& t) { write_png(path, tensor_to_image(t)); }

} // namespace gangeal
