#pragma once

// Little-endian byte packing and whole-file helpers shared by the on-disk formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace gangeal {

void put_u32(std::string& out, uint32_t v);
void put_u64(std::string& out, uint64_t v);
void put_f32(std::string& out, float v);

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view take(size_t n);
    uint32_t u32();
    uint64_t u64();
    float f32();
    size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

} // namespace gangeal
