#include "gangeal/stn.hpp"

#include <cmath>
#include <stdexcept>

namespace gangeal {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

void zero_module(torch::nn::Module& m) {
    torch::NoGradGuard guard;
    for (auto& p : m.parameters()) p.zero_();
}

/// He-normal weights and zero biases drawn from a dedicated generator.
void init_weights(torch::nn::Module& m, at::Generator& gen) {
    torch::NoGradGuard guard;
    for (auto& p : m.parameters()) {
        if (p.dim() > 1) {
            const double fan_in = static_cast<double>(p.numel() / p.size(0));
            p.copy_(torch::randn(p.sizes(), gen, p.scalar_type()) * std::sqrt(2.0 / fan_in));
        } else {
            p.zero_();
        }
    }
}

} // namespace

nlohmann::json NetworkConfig::to_json() const {
    return {{"resolution", resolution}, {"width", width},         {"hidden", hidden},
            {"clusters", clusters},     {"flow_factor", flow_factor}, {"use_flow", use_flow},
            {"padding", to_string(padding)}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
    NetworkConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        if (k == "resolution") c.resolution = it->get<int64_t>();
        else if (k == "width") c.width = it->get<int64_t>();
        else if (k == "hidden") c.hidden = it->get<int64_t>();
        else if (k == "clusters") c.clusters = it->get<int64_t>();
        else if (k == "flow_factor") c.flow_factor = it->get<int64_t>();
        else if (k == "use_flow") c.use_flow = it->get<bool>();
        else if (k == "padding") c.padding = padding_from_string(it->get<std::string>());
        else throw std::invalid_argument("unknown network option '" + k + "'");
    }
    return c;
}

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out, int64_t stride) {
    conv1 = register_module("conv1", conv3(in, out, stride));
    conv2 = register_module("conv2", conv3(out, out));
    if (in != out || stride != 1) {
        skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    auto h = conv2(lrelu(conv1(x)));
    auto s = skip ? skip(x) : x;
    return lrelu((s + h) * M_SQRT1_2);
}

SimBackboneImpl::SimBackboneImpl(int64_t resolution, int64_t width, int64_t hidden) {
    stem = register_module("stem", conv3(3, width, 2));
    blocks = register_module("blocks", torch::nn::Sequential());
    int64_t size = (resolution + 1) / 2, ch = width;
    while (size > 4) {
        const int64_t next = std::min(2 * ch, 4 * width);
        blocks->push_back(ResBlock(ch, next, 2));
        ch = next;
        size = (size + 1) / 2;
    }
    fc = register_module("fc", torch::nn::Linear(ch * size * size, hidden));
}

torch::Tensor SimBackboneImpl::forward(const torch::Tensor& x) {
    auto h = blocks->forward(lrelu(stem(x)));
    return lrelu(fc(h.flatten(1)));
}

FlowBackboneImpl::FlowBackboneImpl(int64_t width, int64_t flow_factor) {
    stem = register_module("stem", conv3(3, width, flow_factor > 1 ? 2 : 1));
    blocks = register_module("blocks", torch::nn::Sequential());
    int64_t ch = width;
    for (int64_t f = flow_factor / 2; f > 1; f /= 2) {
        const int64_t next = std::min(2 * ch, 4 * width);
        blocks->push_back(ResBlock(ch, next, 2));
        ch = next;
    }
    blocks->push_back(ResBlock(ch, ch, 1));
    blocks->push_back(ResBlock(ch, ch, 1));
    out_channels = ch;
}

torch::Tensor FlowBackboneImpl::forward(const torch::Tensor& x) { return blocks->forward(lrelu(stem(x))); }

std::vector<SimilarityParams> WarpResult::similarity() const {
    std::vector<SimilarityParams> out;
    auto m = matrices.detach().to(torch::kFloat64).contiguous();
    for (int64_t n = 0; n < m.size(0); ++n) {
        Eigen::Matrix3d e;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) e(r, c) = m[n][r][c].item<double>();
        out.push_back(similarity_from_matrix(e));
    }
    return out;
}

WarpNetworkImpl::WarpNetworkImpl(NetworkConfig config) : config_(config) {
    if (config_.clusters < 1) throw std::invalid_argument("network: clusters must be >= 1");
    if (config_.flow_factor < 1 || (config_.flow_factor & (config_.flow_factor - 1)) != 0) {
        throw std::invalid_argument("network: flow_factor must be a power of two");
    }
    if (config_.resolution < 8 || config_.resolution % config_.flow_factor != 0) {
        throw std::invalid_argument("network: resolution must be a multiple of flow_factor and at least 8");
    }
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(0);
    sim_backbone = register_module("sim_backbone", SimBackbone(config_.resolution, config_.width, config_.hidden));
    flow_backbone = register_module("flow_backbone", FlowBackbone(config_.width, config_.flow_factor));
    init_weights(*sim_backbone, gen);
    init_weights(*flow_backbone, gen);
    sim_heads = register_module("sim_heads", torch::nn::ModuleList());
    flow_heads = register_module("flow_heads", torch::nn::ModuleList());
    mask_heads = register_module("mask_heads", torch::nn::ModuleList());
    const int64_t c = flow_backbone->out_channels;
    const int64_t f = config_.flow_factor;
    for (int64_t k = 0; k < config_.clusters; ++k) {
        torch::nn::Linear s(config_.hidden, 4);
        torch::nn::Conv2d fl = conv3(c, 2);
        torch::nn::Conv2d mk = conv3(c, 9 * f * f);
        zero_module(*s);
        zero_module(*fl);
        zero_module(*mk);
        sim_heads->push_back(s);
        flow_heads->push_back(fl);
        mask_heads->push_back(mk);
    }
}

torch::nn::Linear WarpNetworkImpl::sim_head(int64_t k) {
    return torch::nn::Linear(sim_heads->ptr<torch::nn::LinearImpl>(k));
}
torch::nn::Conv2d WarpNetworkImpl::flow_head(int64_t k) {
    return torch::nn::Conv2d(flow_heads->ptr<torch::nn::Conv2dImpl>(k));
}
torch::nn::Conv2d WarpNetworkImpl::mask_head(int64_t k) {
    return torch::nn::Conv2d(mask_heads->ptr<torch::nn::Conv2dImpl>(k));
}

std::vector<torch::Tensor> WarpNetworkImpl::cluster_parameters(int64_t k) {
    std::vector<torch::Tensor> out;
    for (const auto& m : {sim_heads[k], flow_heads[k], mask_heads[k]}) {
        for (auto& p : m->parameters()) out.push_back(p);
    }
    return out;
}

void WarpNetworkImpl::check_input_(const torch::Tensor& image, int64_t cluster) const {
    if (cluster < 0 || cluster >= config_.clusters) throw std::invalid_argument("network: cluster index out of range");
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != config_.resolution ||
        image.size(3) != config_.resolution) {
        throw std::invalid_argument("network: expected [N, 3, R, R] input at the network resolution");
    }
}

torch::Tensor WarpNetworkImpl::sim_raw(const torch::Tensor& image, int64_t cluster) {
    check_input_(image, cluster);
    return sim_head(cluster)->forward(sim_backbone->forward(image));
}

SimResult WarpNetworkImpl::forward_sim(const torch::Tensor& image, int64_t cluster) {
    SimResult r;
    r.raw = sim_raw(image, cluster);
    r.matrices = similarity_matrices(r.raw);
    r.grid = grid_from_matrix(r.matrices, image.size(2), image.size(3));
    r.warped = sample(image, r.grid, config_.padding);
    return r;
}

FlowField WarpNetworkImpl::predict_flow(const torch::Tensor& image, int64_t cluster) {
    check_input_(image, cluster);
    auto feat = flow_backbone->forward(image);
    FlowField coarse{flow_head(cluster)->forward(feat).permute({0, 2, 3, 1})};
    auto fine = convex_upsample(coarse, mask_head(cluster)->forward(feat), config_.flow_factor);
    if (fine.height() != image.size(2) || fine.width() != image.size(3)) {
        fine = resize_flow(fine, image.size(2), image.size(3));
    }
    return fine;
}

FlowResult WarpNetworkImpl::forward_flow(const torch::Tensor& image, int64_t cluster) {
    FlowResult r;
    r.flow = predict_flow(image, cluster);
    r.warped = sample(image, r.flow.to_grid(), config_.padding);
    return r;
}

WarpResult WarpNetworkImpl::forward(const torch::Tensor& image, int64_t cluster, int64_t recursion) {
    if (recursion < 1) throw std::invalid_argument("network: recursion must be >= 1");
    auto rec = recursive_align(image, recursion, cluster);
    WarpResult r;
    r.cluster = cluster;
    r.matrices = rec.matrices;
    if (!config_.use_flow) {
        r.grid = grid_from_matrix(rec.matrices, image.size(2), image.size(3));
        r.flow = FlowField::zeros(image.size(0), image.size(2), image.size(3), image.options());
        r.warped = rec.warped;
        return r;
    }
    r.flow = predict_flow(rec.warped, cluster);
    r.grid = apply_matrix(rec.matrices, r.flow.to_grid());
    r.warped = sample(image, r.grid, config_.padding);
    return r;
}

RecursiveResult WarpNetworkImpl::recursive_align(const torch::Tensor& image, int64_t iterations, int64_t cluster) {
    if (iterations < 1) throw std::invalid_argument("recursive_align: iterations must be >= 1");
    RecursiveResult r;
    auto current = image;
    for (int64_t it = 0; it < iterations; ++it) {
        auto m = similarity_matrices(sim_raw(current, cluster));
        r.matrices = it == 0 ? m : torch::matmul(r.matrices, m);
        current = sample(image, grid_from_matrix(r.matrices, image.size(2), image.size(3)), config_.padding);
    }
    r.warped = current;
    return r;
}

torch::Tensor flip_input(const torch::Tensor& image) { return flip_horizontal(image); }

ClusterClassifierImpl::ClusterClassifierImpl(const NetworkConfig& config, uint64_t seed) : clusters_(config.clusters) {
    backbone = register_module("backbone", SimBackbone(config.resolution, config.width, config.hidden));
    head = register_module("head", torch::nn::Linear(config.hidden, 2 * config.clusters));
    auto gen = torch::make_generator<at::CPUGeneratorImpl>(seed);
    init_weights(*backbone, gen);
    torch::NoGradGuard guard;
    head->weight.copy_(torch::randn(head->weight.sizes(), gen) / std::sqrt(static_cast<double>(config.hidden)));
    head->bias.zero_();
}

void ClusterClassifierImpl::init_from(const WarpNetworkImpl& net) { copy_parameters(*net.sim_backbone, *backbone); }

torch::Tensor ClusterClassifierImpl::forward(const torch::Tensor& image) { return head(backbone(image)); }

void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to) {
    auto src = from.named_parameters(true);
    auto dst = to.named_parameters(true);
    if (src.size() != dst.size()) throw std::invalid_argument("copy_parameters: structure mismatch");
    torch::NoGradGuard guard;
    for (const auto& item : src) {
        auto* target = dst.find(item.key());
        if (target == nullptr || target->sizes() != item.value().sizes()) {
            throw std::invalid_argument("copy_parameters: structure mismatch at " + item.key());
        }
        target->copy_(item.value());
    }
}

} // namespace gangeal
