#include "gangeal/grid_io.hpp"

#include "gangeal/binary.hpp"

#include <stdexcept>

namespace gangeal {

std::string encode_ggfl(const torch::Tensor& field_hw2) {
    auto f = field_hw2.dim() == 4 && field_hw2.size(0) == 1 ? field_hw2[0] : field_hw2;
    if (f.dim() != 3 || f.size(2) != 2) {
        throw std::invalid_argument("encode_ggfl: expected an [H, W, 2] field");
    }
    auto data = f.detach().to(torch::kFloat32).contiguous();
    std::string out = "GGFL";
    put_u32(out, static_cast<uint32_t>(data.size(0)));
    put_u32(out, static_cast<uint32_t>(data.size(1)));
    put_u32(out, 2);
    const float* p = data.data_ptr<float>();
    for (int64_t i = 0; i < data.numel(); ++i) put_f32(out, p[i]);
    return out;
}

torch::Tensor decode_ggfl(const std::string& bytes) {
    ByteReader in(bytes);
    if (in.take(4) != "GGFL") {
        throw std::runtime_error("decode_ggfl: bad magic");
    }
    const uint32_t h = in.u32(), w = in.u32(), c = in.u32();
    if (c != 2) {
        throw std::runtime_error("decode_ggfl: channel count must be 2");
    }
    const uint64_t count = static_cast<uint64_t>(h) * w * c;
    if (in.remaining() != count * 4) {
        throw std::runtime_error("decode_ggfl: payload size mismatch");
    }
    auto out = torch::empty({static_cast<int64_t>(h), static_cast<int64_t>(w), 2}, torch::kFloat32);
    float* p = out.data_ptr<float>();
    for (uint64_t i = 0; i < count; ++i) p[i] = in.f32();
    return out;
}

void write_ggfl(const std::filesystem::path& path, const torch::Tensor& field_hw2) {
    write_file(path, encode_ggfl(field_hw2));
}

torch::Tensor read_ggfl(const std::filesystem::path& path) { return decode_ggfl(read_file(path)); }

} // namespace gangeal
