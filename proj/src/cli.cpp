#include "gangeal/cli.hpp"

#include "gangeal/binary.hpp"
#include "gangeal/checkpoint.hpp"
#include "gangeal/correspond.hpp"
#include "gangeal/datapipe.hpp"
#include "gangeal/evalkit.hpp"
#include "gangeal/image_io.hpp"
#include "gangeal/service.hpp"
#include "gangeal/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <sstream>

namespace gangeal {

namespace fs = std::filesystem;

namespace {

std::string format_fraction(std::optional<double> v) {
    if (!v) return "none";
    char buf[32];
    std::snprintf(buf, sizeof(buf), *v == std::floor(*v) ? "%.1f" : "%.4f", *v);
    return buf;
}

std::vector<double> parse_alphas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        size_t used = 0;
        double a = 0.0;
        try {
            a = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || !(a > 0.0)) throw CLI::ValidationError("--alphas", "expected positive numbers");
        out.push_back(a);
    }
    if (out.empty()) throw CLI::ValidationError("--alphas", "no alpha given");
    return out;
}

torch::Tensor load_for(const Model& model, const fs::path& path) {
    return center_crop_resize(read_image(path), model.resolution());
}

/// Pixel mapping between an image file and its center-cropped, resized copy.
struct CropMap {
    double ox = 0, oy = 0, scale = 1;

    CropMap(const fs::path& path, int64_t size) {
        const auto img = read_image8(path);
        const int64_t side = std::min(img.width, img.height);
        ox = static_cast<double>((img.width - side) / 2);
        oy = static_cast<double>((img.height - side) / 2);
        scale = static_cast<double>(size) / static_cast<double>(side);
    }
    KeypointSet to_model(KeypointSet pts) const {
        for (auto& p : pts.points) {
            p.x = (p.x - ox + 0.5) * scale - 0.5;
            p.y = (p.y - oy + 0.5) * scale - 0.5;
        }
        return pts;
    }
    KeypointSet to_file(KeypointSet pts) const {
        for (auto& p : pts.points) {
            p.x = (p.x + 0.5) / scale - 0.5 + ox;
            p.y = (p.y + 0.5) / scale - 0.5 + oy;
        }
        return pts;
    }
};

KeypointSet transfer_files(Model& model, const fs::path& a, const fs::path& b, const KeypointSet& pts,
                           const AlignOptions& options) {
    const CropMap ma(a, model.resolution()), mb(b, model.resolution());
    auto out = transfer_points(model, load_for(model, a), load_for(model, b), ma.to_model(pts), options);
    return mb.to_file(out);
}

struct Args {
    std::string config, checkpoint, out, metrics, input, output, image_a, image_b, keypoints, overlay, queries,
        images_root, report, alphas = "0.1", host = "127.0.0.1", gallery;
    std::vector<std::string> overrides;
    double keep = 0.25, extrapolation = 0.25, zoom = 2.0, alpha = 0.1;
    int64_t recursion = 0, count = 8, pairs = 500, template_samples = 64;
    uint64_t seed = 0;
    int port = 8080;
    bool video = false, mirror = false;
};

AlignOptions align_options(const Args& a) {
    AlignOptions o;
    if (a.recursion > 0) o.recursion = a.recursion;
    return o;
}

int cmd_train(const Args& a, std::ostream& out) {
    auto j = parse_config_text(read_file(a.config));
    std::string extra;
    for (const auto& o : a.overrides) extra += o + "\n";
    j.merge_patch(parse_config_text(extra));
    auto model = create_model(ModelConfig::from_json(j));
    TrainOptions opt;
    opt.checkpoint_dir = fs::path(a.out);
    opt.metrics_csv = a.metrics.empty() ? fs::path(a.out) / "metrics.csv" : fs::path(a.metrics);
    fs::create_directories(a.out);
    opt.on_metrics = [&](const Metrics& m) {
        out << "step=" << m.step << " loss=" << m.loss << " align=" << m.align << " tv=" << m.tv << " ident=" << m.ident
            << '\n';
    };
    auto report = train(model, opt);
    if (report.classifier_accuracy >= 0) out << "classifier_accuracy=" << report.classifier_accuracy << '\n';
    out << "checkpoint=" << a.out << '\n';
    return 0;
}

int cmd_sample(const Args& a, std::ostream& out) {
    Model model = !a.checkpoint.empty() ? load_checkpoint(a.checkpoint)
                                        : create_model(a.config.empty() ? ModelConfig{} : load_config(a.config));
    fs::create_directories(a.output);
    const auto& g = *model.generator;
    auto w = g.sample_latents(a.count, a.seed);
    auto x = g.synthesize(w);
    for (int64_t i = 0; i < a.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04lld", static_cast<long long>(i));
        write_image(fs::path(a.output) / (std::string(name) + ".png"), x.slice(0, i, i + 1));
        write_file(fs::path(a.output) / (std::string(name) + ".json"), keypoints_to_json(g.keypoints(w[i])).dump(2) + "\n");
    }
    out << "wrote " << a.count << " samples to " << a.output << '\n';
    return 0;
}

int cmd_congeal(const Args& a, std::ostream& out) {
    auto model = load_checkpoint(a.checkpoint);
    auto images = load_image_dir(a.input, model.resolution());
    fs::create_directories(a.output);
    std::ostringstream manifest;
    manifest << "id,cluster,flip,smoothness\n";
    torch::Tensor sum = torch::zeros({1, 3, model.resolution(), model.resolution()});
    for (const auto& img : images) {
        auto al = align_image(model, img.image, align_options(a));
        write_image(fs::path(a.output) / (img.id + ".png"), al.congealed);
        manifest << img.id << ',' << al.cluster << ',' << (al.flipped ? 1 : 0) << ',' << al.smoothness << '\n';
        sum += al.congealed;
    }
    if (!images.empty()) write_image(fs::path(a.output) / "average.png", sum / static_cast<double>(images.size()));
    write_file(fs::path(a.output) / "manifest.csv", manifest.str());
    out << "congealed " << images.size() << " images into " << a.output << '\n';
    return 0;
}

int cmd_transfer(const Args& a, std::ostream& out) {
    auto model = load_checkpoint(a.checkpoint);
    auto pts = keypoints_from_json(nlohmann::json::parse(read_file(a.keypoints)));
    auto result = transfer_files(model, a.image_a, a.image_b, pts, align_options(a));
    const auto text = keypoints_to_json(result).dump(2);
    if (!a.output.empty()) write_file(a.output, text + "\n");
    out << text << '\n';
    return 0;
}

int cmd_propagate(const Args& a, std::ostream& out) {
    auto model = load_checkpoint(a.checkpoint);
    auto overlay_img = read_image8(a.overlay);
    if (overlay_img.channels != 4) throw std::runtime_error("overlay must be an RGBA PNG");
    auto overlay = image_to_tensor(overlay_img);
    auto frames = load_image_dir(a.input, model.resolution());
    fs::create_directories(a.output);
    if (a.video) {
        std::vector<torch::Tensor> clip;
        for (const auto& f : frames) clip.push_back(f.image);
        auto result = track_video(model, clip, overlay, align_options(a));
        for (size_t i = 0; i < frames.size(); ++i) write_image(fs::path(a.output) / (frames[i].id + ".png"), result.frames[i]);
    } else {
        for (const auto& f : frames) {
            write_image(fs::path(a.output) / (f.id + ".png"), propagate_overlay(model, overlay, f.image, align_options(a)));
        }
    }
    out << "propagated overlay onto " << frames.size() << " images in " << a.output << '\n';
    return 0;
}

int cmd_filter(const Args& a, std::ostream& out) {
    auto model = load_checkpoint(a.checkpoint);
    auto images = load_image_dir(a.input, model.resolution());
    if (a.mirror) images = mirror_augment(images);
    auto result = filter_dataset(model, images, a.keep);
    fs::create_directories(a.output);
    write_file(fs::path(a.output) / "report.csv", filter_report_csv(result));
    std::ostringstream manifest;
    manifest << "id\n";
    for (const auto& id : result.kept_ids) manifest << id << '\n';
    write_file(fs::path(a.output) / "manifest.csv", manifest.str());
    out << "kept " << result.kept_ids.size() << " of " << images.size() << " images\n";
    return 0;
}

int cmd_align(const Args& a, std::ostream& out) {
    auto model = load_checkpoint(a.checkpoint);
    auto images = load_image_dir(a.input, model.resolution());
    if (a.mirror) images = mirror_augment(images);
    auto records = align_dataset(model, images, {a.extrapolation, a.zoom},
                                 a.recursion > 0 ? std::optional<int64_t>(a.recursion) : std::nullopt);
    write_aligned(a.output, records);
    write_file(fs::path(a.output) / "report.csv", align_report_csv(records));
    int64_t kept = 0;
    for (const auto& r : records) kept += r.kept;
    out << "aligned " << kept << " of " << records.size() << " images\n";
    return 0;
}

int cmd_evaluate(const Args& a, std::ostream& out) {
    auto queries = queries_from_json(nlohmann::json::parse(read_file(a.queries)));
    const auto alphas = parse_alphas(a.alphas);
    const fs::path root = a.images_root.empty() ? fs::path(a.queries).parent_path() : fs::path(a.images_root);
    std::optional<Model> model;
    for (auto& q : queries) {
        if (q.prediction) continue;
        if (!model) {
            if (a.checkpoint.empty()) throw std::runtime_error("queries without predictions need a checkpoint");
            model = load_checkpoint(a.checkpoint);
        }
        q.prediction = transfer_files(*model, root / q.source, root / q.target, q.source_points, align_options(a));
    }
    auto curve = pck_curve(queries, alphas);
    for (const auto& p : curve) {
        out << "alpha=" << p.alpha << " pck=" << format_fraction(p.pck) << " n_points=" << p.points << '\n';
    }
    if (!a.report.empty()) {
        write_file(a.report, curve_to_csv(curve));
        write_file(fs::path(a.report).replace_extension(".tsv"), curve_to_tsv(curve));
    }
    return 0;
}

int cmd_benchmark(const Args& a, std::ostream& out) {
    auto model = load_checkpoint(a.checkpoint);
    auto r = run_toy_benchmark(model, a.pairs, a.alpha, 9001 + a.seed, align_options(a));
    out << "pck=" << format_fraction(r.pck) << " baseline=" << format_fraction(r.baseline_pck) << " points=" << r.points
        << " pairs=" << r.pairs << '\n';
    return 0;
}

int cmd_serve(const Args& a, std::ostream& out) {
    auto manifest = read_manifest(a.checkpoint);
    ServiceOptions opt;
    opt.template_samples = a.template_samples;
    if (!a.gallery.empty()) opt.gallery_dir = fs::path(a.gallery);
    Service service(load_checkpoint(a.checkpoint), manifest, opt);
    out << "serving on http://" << a.host << ':' << a.port << '\n';
    out.flush();
    run_server(service, a.host, a.port);
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"GAN-supervised dense visual alignment", "gangeal"};
    app.require_subcommand(1);
    Args a;
    auto checkpoint = [&](CLI::App* sub, bool required = true) {
        auto* opt = sub->add_option("--checkpoint", a.checkpoint, "checkpoint directory")->envname("GANGEAL_CHECKPOINT");
        if (required) opt->required();
    };
    auto recursion = [&](CLI::App* sub) {
        sub->add_option("--recursion", a.recursion, "similarity recursion (default: checkpoint value)")
            ->check(CLI::NonNegativeNumber);
    };

    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", a.config, "key = value config file")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", a.out, "checkpoint directory")->required();
    train_cmd->add_option("--metrics", a.metrics, "metrics CSV (default: <out>/metrics.csv)");
    train_cmd->add_option("--set", a.overrides, "config override key=value (repeatable)");

    auto* sample_cmd = app.add_subcommand("sample", "write toy generator samples with keypoints");
    sample_cmd->add_option("--config", a.config, "config file")->check(CLI::ExistingFile);
    checkpoint(sample_cmd, false);
    sample_cmd->add_option("--output", a.output, "output directory")->required();
    sample_cmd->add_option("--count", a.count, "number of samples")->check(CLI::PositiveNumber);
    sample_cmd->add_option("--seed", a.seed, "latent seed");

    auto* congeal_cmd = app.add_subcommand("congeal", "warp every image of a directory into congealed space");
    checkpoint(congeal_cmd);
    congeal_cmd->add_option("--input", a.input, "image directory")->required()->check(CLI::ExistingDirectory);
    congeal_cmd->add_option("--output", a.output, "output directory")->required();
    recursion(congeal_cmd);

    auto* transfer_cmd = app.add_subcommand("transfer", "transfer keypoints from image A to image B");
    checkpoint(transfer_cmd);
    transfer_cmd->add_option("--image-a", a.image_a, "source image")->required()->check(CLI::ExistingFile);
    transfer_cmd->add_option("--image-b", a.image_b, "target image")->required()->check(CLI::ExistingFile);
    transfer_cmd->add_option("--keypoints", a.keypoints, "JSON keypoints of image A")->required()->check(CLI::ExistingFile);
    transfer_cmd->add_option("--output", a.output, "write the transferred keypoints here");
    recursion(transfer_cmd);

    auto* propagate_cmd = app.add_subcommand("propagate", "propagate a congealed-space overlay");
    checkpoint(propagate_cmd);
    propagate_cmd->add_option("--overlay", a.overlay, "RGBA PNG in congealed coordinates")->required()->check(CLI::ExistingFile);
    propagate_cmd->add_option("--input", a.input, "image or frame directory")->required()->check(CLI::ExistingDirectory);
    propagate_cmd->add_option("--output", a.output, "output directory")->required();
    propagate_cmd->add_flag("--video", a.video, "treat the input as frames of one clip");
    recursion(propagate_cmd);

    auto* filter_cmd = app.add_subcommand("filter", "keep the images with the smoothest flow");
    checkpoint(filter_cmd);
    filter_cmd->add_option("--input", a.input, "image directory")->required()->check(CLI::ExistingDirectory);
    filter_cmd->add_option("--output", a.output, "report directory")->required();
    filter_cmd->add_option("--keep", a.keep, "fraction to keep")->check(CLI::Range(0.0, 1.0));
    filter_cmd->add_flag("--mirror", a.mirror, "add mirrored copies");

    auto* align_cmd = app.add_subcommand("align", "similarity-align a dataset with rejection");
    checkpoint(align_cmd);
    align_cmd->add_option("--input", a.input, "image directory")->required()->check(CLI::ExistingDirectory);
    align_cmd->add_option("--output", a.output, "output directory")->required();
    align_cmd->add_option("--extrapolation", a.extrapolation, "largest out-of-image sample fraction")->check(CLI::PositiveNumber);
    align_cmd->add_option("--zoom", a.zoom, "largest scale change")->check(CLI::PositiveNumber);
    align_cmd->add_flag("--mirror", a.mirror, "add mirrored copies");
    recursion(align_cmd);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "PCK over a query manifest");
    checkpoint(evaluate_cmd, false);
    evaluate_cmd->add_option("--queries", a.queries, "JSON query manifest")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--alphas", a.alphas, "comma-separated thresholds");
    evaluate_cmd->add_option("--images-root", a.images_root, "base directory of image paths");
    evaluate_cmd->add_option("--report", a.report, "CSV report path (a .tsv is written next to it)");
    recursion(evaluate_cmd);

    auto* bench_cmd = app.add_subcommand("benchmark", "toy keypoint-transfer benchmark");
    checkpoint(bench_cmd);
    bench_cmd->add_option("--pairs", a.pairs, "image pairs")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--alpha", a.alpha, "PCK threshold")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--seed", a.seed, "pair seed offset");
    recursion(bench_cmd);

    auto* serve_cmd = app.add_subcommand("serve", "HTTP service for the annotation tool");
    checkpoint(serve_cmd);
    serve_cmd->add_option("--port", a.port, "port")->check(CLI::Range(1, 65535));
    serve_cmd->add_option("--host", a.host, "bind address");
    serve_cmd->add_option("--gallery", a.gallery, "gallery image directory")->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--template-samples", a.template_samples, "samples averaged per template")
        ->check(CLI::PositiveNumber);

    if (!args.empty() && !args[0].empty() && args[0][0] != '-' && app.get_subcommand_no_throw(args[0]) == nullptr) {
        err << "error: unknown subcommand '" << args[0] << "'\n\n" << app.help();
        return 1;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*train_cmd) return cmd_train(a, out);
        if (*sample_cmd) return cmd_sample(a, out);
        if (*congeal_cmd) return cmd_congeal(a, out);
        if (*transfer_cmd) return cmd_transfer(a, out);
        if (*propagate_cmd) return cmd_propagate(a, out);
        if (*filter_cmd) return cmd_filter(a, out);
        if (*align_cmd) return cmd_align(a, out);
        if (*evaluate_cmd) return cmd_evaluate(a, out);
        if (*bench_cmd) return cmd_benchmark(a, out);
        if (*serve_cmd) return cmd_serve(a, out);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    err << app.help();
    return 1;
}

} // namespace gangeal
