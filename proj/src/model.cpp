#include "gangeal/model.hpp"

#include "gangeal/binary.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

namespace gangeal {

nlohmann::json PerceptualConfig::to_json() const { return {{"kind", kind}, {"seed", seed}, {"width", width}}; }

PerceptualConfig PerceptualConfig::from_json(const nlohmann::json& j) {
    PerceptualConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "kind") c.kind = value.get<std::string>();
        else if (key == "seed") c.seed = value.get<uint64_t>();
        else if (key == "width") c.width = value.get<int64_t>();
        else throw std::invalid_argument("unknown perceptual option: " + key);
    }
    return c;
}

FeatureDistance PerceptualConfig::make() const {
    if (kind == "random_features") return FeatureDistance::random_features(seed, width);
    return make_extractor(kind, seed);
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lambda_tv", lambda_tv},
            {"lambda_i", lambda_i},
            {"lr_T", lr_T},
            {"lr_c", lr_c},
            {"batch", batch},
            {"total_steps", total_steps},
            {"anneal", anneal},
            {"anneal_steps", anneal_steps},
            {"restart_period", restart_period},
            {"beta1", beta1},
            {"beta2", beta2},
            {"weight_decay", weight_decay},
            {"cutoff", cutoff},
            {"N", N},
            {"K", K},
            {"flip", flip},
            {"seed", seed},
            {"pca_pool", pca_pool},
            {"kmeans_pool", kmeans_pool},
            {"recursion", recursion},
            {"log_every", log_every},
            {"checkpoint_every", checkpoint_every},
            {"classifier_steps", classifier_steps},
            {"classifier_batch", classifier_batch},
            {"lr_classifier", lr_classifier},
            {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "lambda_tv") c.lambda_tv = v.get<double>();
        else if (key == "lambda_i") c.lambda_i = v.get<double>();
        else if (key == "lr_T") c.lr_T = v.get<double>();
        else if (key == "lr_c") c.lr_c = v.get<double>();
        else if (key == "batch") c.batch = v.get<int64_t>();
        else if (key == "total_steps") c.total_steps = v.get<int64_t>();
        else if (key == "anneal") c.anneal = v.get<bool>();
        else if (key == "anneal_steps") c.anneal_steps = v.get<int64_t>();
        else if (key == "restart_period") c.restart_period = v.get<int64_t>();
        else if (key == "beta1") c.beta1 = v.get<double>();
        else if (key == "beta2") c.beta2 = v.get<double>();
        else if (key == "weight_decay") c.weight_decay = v.get<double>();
        else if (key == "cutoff") c.cutoff = v.get<int64_t>();
        else if (key == "N") c.N = v.get<int64_t>();
        else if (key == "K") c.K = v.get<int64_t>();
        else if (key == "flip") c.flip = v.get<bool>();
        else if (key == "seed") c.seed = v.get<uint64_t>();
        else if (key == "pca_pool") c.pca_pool = v.get<int64_t>();
        else if (key == "kmeans_pool") c.kmeans_pool = v.get<int64_t>();
        else if (key == "recursion") c.recursion = v.get<int64_t>();
        else if (key == "log_every") c.log_every = v.get<int64_t>();
        else if (key == "checkpoint_every") c.checkpoint_every = v.get<int64_t>();
        else if (key == "classifier_steps") c.classifier_steps = v.get<int64_t>();
        else if (key == "classifier_batch") c.classifier_batch = v.get<int64_t>();
        else if (key == "lr_classifier") c.lr_classifier = v.get<double>();
        else if (key == "grad_clip") c.grad_clip = v.get<double>();
        else throw std::invalid_argument("unknown train option: " + key);
    }
    return c;
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
    };
    require(lambda_tv >= 0 && lambda_i >= 0, "regularizer weights must be nonnegative");
    require(lr_T > 0 && lr_c > 0 && lr_classifier > 0, "learning rates must be positive");
    require(batch >= 1, "batch must be >= 1");
    require(total_steps >= 0, "total_steps must be >= 0");
    require(anneal_steps >= 1, "anneal_steps must be >= 1");
    require(restart_period >= 0, "restart_period must be >= 0");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
    require(N >= 0, "N must be >= 0");
    require(K >= 1, "K must be >= 1");
    require(cutoff >= 0, "cutoff must be >= 0");
    require(pca_pool >= 2, "pca_pool must be >= 2");
    require(kmeans_pool >= K, "kmeans_pool must be >= K");
    require(recursion >= 1, "recursion must be >= 1");
    require(log_every >= 1, "log_every must be >= 1");
    require(grad_clip >= 0, "grad_clip must be >= 0");
    require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
    require(classifier_steps >= 0 && classifier_batch >= 1, "classifier settings out of range");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"generator", generator.to_json()},
            {"network", network.to_json()},
            {"perceptual", perceptual.to_json()},
            {"train", train.to_json()}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "generator") c.generator = ToyGeneratorConfig::from_json(value);
        else if (key == "network") c.network = NetworkConfig::from_json(value);
        else if (key == "perceptual") c.perceptual = PerceptualConfig::from_json(value);
        else if (key == "train") c.train = TrainConfig::from_json(value);
        else throw std::invalid_argument("unknown config section: " + key);
    }
    return c;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

nlohmann::json typed_value(const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    int64_t i = 0;
    auto [pi, ei] = std::from_chars(text.data(), text.data() + text.size(), i);
    if (ei == std::errc() && pi == text.data() + text.size()) return i;
    double d = 0.0;
    auto [pd, ed] = std::from_chars(text.data(), text.data() + text.size(), d);
    if (ed == std::errc() && pd == text.data() + text.size()) return d;
    return text;
}

} // namespace

nlohmann::json parse_config_text(const std::string& text) {
    nlohmann::json out = nlohmann::json::object();
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto dot = key.find('.');
        if (dot == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": key needs a section prefix");
        }
        const auto section = key.substr(0, dot);
        if (section != "generator" && section != "network" && section != "perceptual" && section != "train") {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown section '" + section + "'");
        }
        out[section][key.substr(dot + 1)] = typed_value(value);
    }
    return out;
}

ModelConfig load_config(const std::filesystem::path& path) {
    return ModelConfig::from_json(parse_config_text(read_file(path)));
}

Model create_model(ModelConfig config) {
    config.train.validate();
    config.network.clusters = config.train.K;
    config.network.resolution = config.generator.resolution;
    Model m;
    auto gen = std::make_shared<ToyGenerator>(config.generator);
    if (config.train.cutoff > gen->num_layers()) throw std::invalid_argument("train config: cutoff exceeds layer count");
    if (config.train.N > gen->latent_dim()) throw std::invalid_argument("train config: N exceeds the latent dimension");
    m.distance = config.perceptual.make();
    m.network = WarpNetwork(config.network);
    m.basis = std::make_shared<LatentBasis>(fit_pca(gen->sample_latents(config.train.pca_pool, config.train.seed + 1)));
    for (int64_t k = 0; k < config.train.K; ++k) m.targets.emplace_back(m.basis, config.train.N);
    m.generator = gen;
    m.config = config;
    return m;
}

} // namespace gangeal
