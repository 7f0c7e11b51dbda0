#include "gangeal/service.hpp"

#include "gangeal/base64.hpp"
#include "gangeal/correspond.hpp"
#include "gangeal/image_io.hpp"

#include <httplib.h>

#include <stdexcept>

namespace gangeal {

namespace {

/// Signals a client error (400).
struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Response json_response(const nlohmann::json& j, int status = 200) { return {status, j.dump(), "application/json"}; }

Response error_response(int status, const std::string& message) {
    return json_response({{"error", message}}, status);
}

template <class F>
Response guarded(F&& f) {
    try {
        return f();
    } catch (const BadRequest& e) {
        return error_response(400, e.what());
    } catch (const nlohmann::json::exception& e) {
        return error_response(400, std::string("malformed request: ") + e.what());
    } catch (const std::invalid_argument& e) {
        return error_response(400, e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

nlohmann::json parse_body(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
}

std::string png_base64(const torch::Tensor& image) { return base64_encode(encode_png(tensor_to_image(image))); }

/// Rounds an image to the 8-bit lattice so it equals its own PNG decoding.
torch::Tensor quantize(const torch::Tensor& image) { return image_to_tensor(tensor_to_image(image)); }

} // namespace

std::vector<torch::Tensor> congealed_templates(Model& model, int64_t samples, uint64_t seed) {
    torch::NoGradGuard guard;
    const auto& g = *model.generator;
    const int64_t r = model.resolution();
    std::vector<torch::Tensor> sum(model.clusters(), torch::zeros({1, 3, r, r}));
    std::vector<int64_t> count(model.clusters(), 0);
    auto w = g.sample_latents(samples, seed);
    auto x = g.synthesize(w);
    for (int64_t i = 0; i < samples; ++i) {
        auto a = align_image(model, x.slice(0, i, i + 1));
        sum[a.cluster] += a.congealed;
        ++count[a.cluster];
    }
    std::vector<torch::Tensor> out;
    for (int64_t k = 0; k < model.clusters(); ++k) {
        if (count[k] > 0) {
            out.push_back(sum[k] / static_cast<double>(count[k]));
        } else {
            auto mean = model.basis->mean.unsqueeze(0);
            out.push_back(g.synthesize(g.mix(model.targets[k].materialize(), mean, model.config.train.cutoff)));
        }
    }
    return out;
}

Service::Service(Model model, nlohmann::json manifest, ServiceOptions options)
    : model_(std::move(model)), manifest_(std::move(manifest)), options_(std::move(options)) {
    if (options_.gallery_dir) {
        gallery_ = load_image_dir(*options_.gallery_dir, model_.resolution());
    } else {
        torch::NoGradGuard guard;
        const auto& g = *model_.generator;
        auto x = g.synthesize(g.sample_latents(options_.gallery_size, options_.gallery_seed));
        for (int64_t i = 0; i < options_.gallery_size; ++i) {
            gallery_.push_back({"toy-" + std::to_string(i), quantize(x.slice(0, i, i + 1))});
        }
    }
    for (size_t i = 0; i < gallery_.size(); ++i) gallery_index_[gallery_[i].id] = i;
    templates_ = congealed_templates(model_, options_.template_samples, options_.template_seed);
    for (const auto& t : templates_) template_png_.push_back(encode_png(tensor_to_image(t)));
}

Response Service::meta() const { return json_response(manifest_); }

Response Service::template_png(const std::string& cluster) const {
    return guarded([&] {
        int64_t k = 0;
        if (!cluster.empty()) {
            size_t used = 0;
            try {
                k = std::stoll(cluster, &used);
            } catch (const std::exception&) {
                throw BadRequest("cluster must be an integer");
            }
            if (used != cluster.size()) throw BadRequest("cluster must be an integer");
        }
        if (k < 0 || k >= static_cast<int64_t>(template_png_.size())) throw BadRequest("cluster out of range");
        return Response{200, template_png_[k], "image/png"};
    });
}

Response Service::images() const {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& r : gallery_) ids.push_back(r.id);
    return json_response({{"images", ids}});
}

Response Service::image_png(const std::string& id) const {
    return guarded([&] {
        auto it = gallery_index_.find(id);
        if (it == gallery_index_.end()) throw BadRequest("unknown image id '" + id + "'");
        return Response{200, encode_png(tensor_to_image(gallery_[it->second].image)), "image/png"};
    });
}

torch::Tensor Service::resolve_image_(const nlohmann::json& ref, std::string* id) const {
    if (ref.is_string()) {
        auto it = gallery_index_.find(ref.get<std::string>());
        if (it == gallery_index_.end()) throw BadRequest("unknown image id '" + ref.get<std::string>() + "'");
        if (id) *id = ref.get<std::string>();
        return gallery_[it->second].image;
    }
    if (ref.is_object()) {
        if (ref.contains("id")) return resolve_image_(ref.at("id"), id);
        if (ref.contains("image")) {
            torch::Tensor img;
            try {
                img = image_to_tensor(decode_image(base64_decode(ref.at("image").get<std::string>())));
            } catch (const std::invalid_argument& e) {
                throw BadRequest(e.what());
            } catch (const std::runtime_error& e) {
                throw BadRequest(std::string("cannot decode image: ") + e.what());
            }
            if (id) *id = "upload";
            return center_crop_resize(img.slice(1, 0, 3), model_.resolution());
        }
    }
    throw BadRequest("an image reference is a gallery id or {\"image\": base64 PNG/JPEG}");
}

Response Service::propagate(const std::string& body) {
    return guarded([&] {
        const auto j = parse_body(body);
        if (!j.contains("overlay")) throw BadRequest("missing overlay");
        torch::Tensor overlay;
        try {
            auto img = decode_image(base64_decode(j.at("overlay").get<std::string>()));
            if (img.channels != 4) throw BadRequest("overlay must be an RGBA PNG");
            overlay = image_to_tensor(img);
        } catch (const std::invalid_argument& e) {
            throw BadRequest(e.what());
        } catch (const std::runtime_error& e) {
            throw BadRequest(std::string("cannot decode overlay: ") + e.what());
        }
        const int64_t r = model_.resolution();
        if (overlay.size(2) != r || overlay.size(3) != r) throw BadRequest("overlay must match the template size");
        AlignOptions opt;
        if (j.contains("cluster")) {
            const auto k = j.at("cluster").get<int64_t>();
            if (k < 0 || k >= model_.clusters()) throw BadRequest("cluster out of range");
            opt.cluster = k;
        }
        nlohmann::json results = nlohmann::json::array();
        auto run = [&](const nlohmann::json& ref, const std::string& fallback_id) {
            std::string id = fallback_id;
            auto image = resolve_image_(ref, &id);
            if (id == "upload") id = fallback_id;
            auto out = propagate_overlay(model_, overlay, image, opt);
            results.push_back({{"id", id}, {"image", png_base64(out)}});
        };
        if (j.contains("ids")) {
            for (const auto& id : j.at("ids")) run(id, id.get<std::string>());
        }
        if (j.contains("images")) {
            int64_t n = 0;
            for (const auto& img : j.at("images")) {
                run(img.is_string() ? nlohmann::json{{"image", img}} : img, "upload-" + std::to_string(n++));
            }
        }
        if (results.empty()) throw BadRequest("no target images (ids or images)");
        return json_response({{"results", results}});
    });
}

Response Service::transfer(const std::string& body) {
    return guarded([&] {
        const auto j = parse_body(body);
        auto a = resolve_image_(j.at("source"), nullptr);
        auto b = resolve_image_(j.at("target"), nullptr);
        auto pts = keypoints_from_json(j.at("points"));
        auto out = transfer_points(model_, a, b, pts);
        return json_response({{"points", keypoints_to_json(out)}});
    });
}

Response Service::score(const std::string& body) {
    return guarded([&] {
        const auto j = parse_body(body);
        auto image = resolve_image_(j, nullptr);
        auto r = smoothness_score(model_, image);
        return json_response({{"score", r.score}, {"flip", r.flip_used}});
    });
}

void Service::mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server.Get("/api/meta", [this, send](const httplib::Request&, httplib::Response& res) { send(res, meta()); });
    server.Get("/api/template", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, template_png(req.has_param("cluster") ? req.get_param_value("cluster") : ""));
    });
    server.Get("/api/images", [this, send](const httplib::Request&, httplib::Response& res) { send(res, images()); });
    server.Get("/api/image", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, image_png(req.get_param_value("id")));
    });
    server.Post("/api/propagate",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, propagate(req.body)); });
    server.Post("/api/transfer",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, transfer(req.body)); });
    server.Post("/api/score",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, score(req.body)); });
}

void run_server(Service& service, const std::string& host, int port) {
    httplib::Server server;
    service.mount(server);
    if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

} // namespace gangeal
