#pragma once

#include "gangeal/datapipe.hpp"
#include "gangeal/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace gangeal {

struct ServiceOptions {
    int64_t template_samples = 64;
    uint64_t template_seed = 7;
    int64_t gallery_size = 8;  // toy samples served when no gallery directory is given
    uint64_t gallery_seed = 11;
    std::optional<std::filesystem::path> gallery_dir;
};

struct Response {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

/// Request handlers of the annotation service. Templates and the gallery are
/// built in the constructor; handlers only read shared state.
class Service {
public:
    Service(Model model, nlohmann::json manifest, ServiceOptions options = {});

    Response meta() const;
    /// `cluster` is the raw query value (empty means 0).
    Response template_png(const std::string& cluster) const;
    Response images() const;
    Response image_png(const std::string& id) const;
    Response propagate(const std::string& body);
    Response transfer(const std::string& body);
    Response score(const std::string& body);

    /// Registers GET /api/meta, /api/template, /api/images, /api/image and
    /// POST /api/propagate, /api/transfer, /api/score.
    void mount(httplib::Server& server);

    const std::vector<ImageRecord>& gallery() const { return gallery_; }
    const torch::Tensor& template_image(int64_t cluster) const { return templates_.at(cluster); }
    Model& model() { return model_; }

private:
    torch::Tensor resolve_image_(const nlohmann::json& ref, std::string* id) const;

    Model model_;
    nlohmann::json manifest_;
    ServiceOptions options_;
    std::vector<ImageRecord> gallery_;
    std::map<std::string, size_t> gallery_index_;
    std::vector<torch::Tensor> templates_;
    std::vector<std::string> template_png_;
};

/// Mean congealed image of every cluster over seeded generator samples.
std::vector<torch::Tensor> congealed_templates(Model& model, int64_t samples, uint64_t seed);

/// Blocks serving on host:port.
void run_server(Service& service, const std::string& host, int port);

} // namespace gangeal
