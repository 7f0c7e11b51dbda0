#include "gangeal/base64.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace gangeal {

std::string base64_encode(const std::string& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<size_t>(n));
    return out;
}

std::string base64_decode(const std::string& text) {
    std::string body = text;
    if (body.rfind("data:", 0) == 0) {
        const auto comma = body.find(',');
        if (comma == std::string::npos) throw std::invalid_argument("base64: malformed data URL");
        body = body.substr(comma + 1);
    }
    if (body.size() % 4 != 0) throw std::invalid_argument("base64: length is not a multiple of 4");
    if (body.empty()) return {};
    std::string out(3 * body.size() / 4, '\0');
    const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(body.data()), static_cast<int>(body.size()));
    if (n < 0) throw std::invalid_argument("base64: invalid characters");
    size_t pad = 0;
    if (body.back() == '=') ++pad;
    if (body.size() >= 2 && body[body.size() - 2] == '=') ++pad;
    out.resize(static_cast<size_t>(n) - pad);
    return out;
}

} // namespace gangeal
