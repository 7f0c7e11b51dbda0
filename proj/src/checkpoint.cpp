#include "gangeal/checkpoint.hpp"

#include "gangeal/binary.hpp"

#include <stdexcept>

namespace gangeal {

namespace {

constexpr char kArchiveMagic[4] = {'G', 'G', 'T', 'S'};

std::map<std::string, torch::Tensor> collect(const Model& model) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : model.network->named_parameters(true)) out["network/" + p.key()] = p.value();
    if (model.classifier) {
        for (const auto& p : model.classifier->named_parameters(true)) out["classifier/" + p.key()] = p.value();
    }
    out["basis/mean"] = model.basis->mean;
    out["basis/directions"] = model.basis->directions;
    out["basis/eigenvalues"] = model.basis->eigenvalues;
    for (size_t k = 0; k < model.targets.size(); ++k) {
        out["targets/" + std::to_string(k) + "/coefficients"] = model.targets[k].coefficients();
    }
    return out;
}

torch::Tensor take(std::map<std::string, torch::Tensor>& tensors, const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    auto t = it->second;
    tensors.erase(it);
    return t;
}

void assign_module(torch::nn::Module& module, const std::string& prefix, std::map<std::string, torch::Tensor>& tensors) {
    torch::NoGradGuard guard;
    for (auto& p : module.named_parameters(true)) {
        auto t = take(tensors, prefix + p.key());
        if (t.sizes() != p.value().sizes()) throw std::runtime_error("checkpoint: shape mismatch for " + prefix + p.key());
        p.value().copy_(t);
    }
}

} // namespace

std::string encode_tensor_archive(const std::map<std::string, torch::Tensor>& tensors) {
    std::string out(kArchiveMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        auto t = tensor.detach().to(torch::kFloat32).contiguous();
        put_u32(out, static_cast<uint32_t>(t.dim()));
        for (int64_t d = 0; d < t.dim(); ++d) put_u64(out, static_cast<uint64_t>(t.size(d)));
        const float* data = t.data_ptr<float>();
        for (int64_t i = 0; i < t.numel(); ++i) put_f32(out, data[i]);
    }
    return out;
}

std::map<std::string, torch::Tensor> decode_tensor_archive(const std::string& bytes) {
    ByteReader r(bytes);
    if (r.take(4) != std::string_view(kArchiveMagic, 4)) throw std::runtime_error("tensor archive: bad magic");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw std::runtime_error("tensor archive: unsupported version");
    const auto count = r.u32();
    std::map<std::string, torch::Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const auto name = std::string(r.take(r.u32()));
        const auto rank = r.u32();
        std::vector<int64_t> shape;
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int64_t>(r.u64()));
            numel *= shape.back();
        }
        if (static_cast<uint64_t>(numel) * 4 > r.remaining()) throw std::runtime_error("tensor archive: truncated data");
        auto t = torch::empty(shape, torch::kFloat32);
        float* data = t.data_ptr<float>();
        for (int64_t k = 0; k < numel; ++k) data[k] = r.f32();
        if (!out.emplace(name, t).second) throw std::runtime_error("tensor archive: duplicate entry " + name);
    }
    if (r.remaining() != 0) throw std::runtime_error("tensor archive: trailing bytes");
    return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir, const nlohmann::json& extra) {
    std::filesystem::create_directories(dir);
    const auto tensors = collect(model);
    nlohmann::json names = nlohmann::json::array();
    for (const auto& [name, t] : tensors) names.push_back(name);
    nlohmann::json manifest = {{"format", "gangeal-checkpoint"},
                               {"version", kCheckpointVersion},
                               {"K", model.clusters()},
                               {"padding", to_string(model.config.network.padding)},
                               {"cutoff", model.config.train.cutoff},
                               {"N", model.config.train.N},
                               {"resolution", model.resolution()},
                               {"recursion", model.recursion()},
                               {"flip", model.flip_enabled()},
                               {"classifier", static_cast<bool>(model.classifier)},
                               {"config", model.config.to_json()},
                               {"tensors", names}};
    if (extra.is_object()) manifest.update(extra);
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_file(dir / "tensors.bin", encode_tensor_archive(tensors));
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
    const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    if (!manifest.contains("version")) throw std::runtime_error("checkpoint: manifest lacks a version");
    if (manifest.at("version").get<int>() != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
    return manifest;
}

Model load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = read_manifest(dir);
    auto tensors = decode_tensor_archive(read_file(dir / "tensors.bin"));
    for (const auto& name : manifest.at("tensors")) {
        if (!tensors.count(name.get<std::string>())) throw std::runtime_error("checkpoint: missing tensor " + name.get<std::string>());
    }
    const auto config = ModelConfig::from_json(manifest.at("config"));
    config.train.validate();

    Model m;
    m.config = config;
    m.generator = std::make_shared<ToyGenerator>(config.generator);
    m.distance = config.perceptual.make();
    m.network = WarpNetwork(config.network);
    assign_module(*m.network, "network/", tensors);
    if (manifest.value("classifier", false)) {
        m.classifier = ClusterClassifier(config.network);
        assign_module(*m.classifier, "classifier/", tensors);
    }
    auto basis = std::make_shared<LatentBasis>();
    basis->mean = take(tensors, "basis/mean");
    basis->directions = take(tensors, "basis/directions");
    basis->eigenvalues = take(tensors, "basis/eigenvalues");
    m.basis = basis;
    for (int64_t k = 0; k < config.train.K; ++k) {
        m.targets.emplace_back(m.basis, take(tensors, "targets/" + std::to_string(k) + "/coefficients"));
    }
    if (!tensors.empty()) throw std::runtime_error("checkpoint: unexpected tensor " + tensors.begin()->first);
    return m;
}

} // namespace gangeal
