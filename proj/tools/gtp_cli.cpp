#include "gtp/common/binary_io.hpp"
#include "gtp/common/errors.hpp"
#include "gtp/pipeline/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <optional>
#include <sstream>

using namespace gtp;
using nlohmann::json;
namespace fs = std::filesystem;
namespace pl = gtp::pipeline;

namespace {

struct Options {
    std::string config;
    bool quiet = false;
    std::string data, out, encoder, embeddings, graphs, model, slide, split = "test";
    std::optional<int> slides, folds, target_class;
    std::optional<std::uint64_t> seed;
};

pl::RunConfig load_config(const Options& o) {
    return o.config.empty() ? pl::run_config_from_json(json::object()) : pl::load_run_config(o.config);
}

pl::Log logger(const Options& o) {
    if (o.quiet) return {};
    return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path)) throw DataError(std::string(what) + " directory '" + path + "' does not exist");
}

synth::Dataset open_dataset(const Options& o) {
    require_dir(o.data, "data");
    return synth::load_dataset(fs::path(o.data) / "manifest.json");
}

std::vector<synth::SlideEntry> select(const synth::Dataset& ds, const std::string& id) {
    if (id.empty()) return ds.slides;
    for (const auto& e : ds.slides)
        if (e.id == id) return {e};
    throw DataError("slide '" + id + "' is not in the dataset manifest");
}

void echo(const fs::path& dir, const json& cfg) {
    fs::create_directories(dir);
    write_json(dir / "run_config.json", cfg);
}

int cmd_synth(const Options& o) {
    pl::RunConfig c = load_config(o);
    if (o.slides) c.dataset.num_slides = *o.slides;
    if (o.seed) c.dataset.seed = *o.seed;
    const json cfg = pl::to_json(c);
    pl::synth(c, o.out);
    json manifest = read_json(fs::path(o.out) / "manifest.json");
    manifest["run_config"] = cfg;
    write_json(fs::path(o.out) / "manifest.json", manifest);
    echo(o.out, cfg);
    if (auto log = logger(o)) log("wrote " + std::to_string(c.dataset.num_slides) + " slides to " + o.out);
    return 0;
}

int cmd_tile(const Options& o) {
    const pl::RunConfig c = load_config(o);
    const synth::Dataset ds = open_dataset(o);
    const json cfg = pl::to_json(c);
    for (const auto& e : select(ds, o.slide)) pl::write_tiles(fs::path(o.out) / e.id, pl::tile(c, o.data, e), cfg);
    echo(o.out, cfg);
    return 0;
}

int cmd_pretrain(const Options& o) {
    pl::RunConfig c = load_config(o);
    if (o.seed) c.pretrain.seed = *o.seed;
    open_dataset(o);
    const json cfg = pl::to_json(c);
    contrastive::PretrainResult r = pl::pretrain(c, o.data, logger(o));
    std::ostringstream csv;
    csv.precision(17);
    csv << "step,loss,lr\n";
    for (const auto& e : r.log) csv << e.step << ',' << e.loss << ',' << e.lr << '\n';
    json extra{{"run_config", cfg}};
    if (r.heldout_loss_initial) extra["heldout_loss_initial"] = *r.heldout_loss_initial;
    if (r.heldout_loss_final) extra["heldout_loss_final"] = *r.heldout_loss_final;
    contrastive::save_encoder(o.out, r.encoder, extra);
    write_text(fs::path(o.out) / "pretrain_log.csv", csv.str());
    echo(o.out, cfg);
    if (auto log = logger(o); log && r.heldout_loss_final) {
        std::ostringstream os;
        os << "held-out loss " << *r.heldout_loss_initial << " -> " << *r.heldout_loss_final;
        log(os.str());
    }
    return 0;
}

int cmd_embed(const Options& o) {
    const pl::RunConfig c = load_config(o);
    const synth::Dataset ds = open_dataset(o);
    require_dir(o.encoder, "encoder");
    const contrastive::Encoder enc = contrastive::load_encoder(o.encoder);
    if (enc.config.embedding_dim != c.model.feature_dim) {
        throw DataError("encoder embedding_dim " + std::to_string(enc.config.embedding_dim) +
                        " does not match model.feature_dim " + std::to_string(c.model.feature_dim));
    }
    const json cfg = pl::to_json(c);
    for (const auto& e : select(ds, o.slide)) pl::save_embedding(fs::path(o.out) / e.id, pl::embed(c, o.data, e, enc), cfg);
    echo(o.out, cfg);
    return 0;
}

int cmd_build_graph(const Options& o) {
    const pl::RunConfig c = load_config(o);
    require_dir(o.embeddings, "embeddings");
    std::vector<fs::path> dirs;
    if (!o.slide.empty()) {
        dirs.push_back(fs::path(o.embeddings) / o.slide);
    } else {
        for (const auto& d : fs::directory_iterator(o.embeddings))
            if (d.is_directory()) dirs.push_back(d.path());
        std::sort(dirs.begin(), dirs.end());
    }
    for (const auto& d : dirs) {
        pl::Embedding e = pl::load_embedding(d);
        graph::save_graph(fs::path(o.out) / e.slide_id, pl::build_graph(e, c.model.connectivity));
    }
    echo(o.out, pl::to_json(c));
    return 0;
}

std::vector<const graph::WsiGraph*> by_split(const synth::Dataset& ds, const std::vector<graph::WsiGraph>& graphs,
                                             const std::string& split) {
    std::vector<const graph::WsiGraph*> out;
    for (std::size_t i = 0; i < ds.slides.size(); ++i)
        if (split == "all" || ds.slides[i].split == split) out.push_back(&graphs[i]);
    if (out.empty()) throw DataError("no slides in split '" + split + "'");
    return out;
}

void write_evaluation(const fs::path& dir, const pl::Evaluation& ev, const json& cfg) {
    json report = metrics::to_json(ev.report);
    report["run_config"] = cfg;
    write_json(dir / "metrics_report.json", report);
    write_text(dir / "curves.csv", metrics::curves_csv(ev.report));
    write_json(dir / "predictions.json", pl::predictions_json(ev));
}

int cmd_train(const Options& o) {
    pl::RunConfig c = load_config(o);
    if (o.seed) c.train.seed = *o.seed;
    if (o.folds) c.folds = *o.folds;
    const synth::Dataset ds = open_dataset(o);
    require_dir(o.graphs, "graphs");
    const std::vector<graph::WsiGraph> graphs = pl::load_graphs(o.graphs, ds);
    const json cfg = pl::to_json(c);
    const fs::path out(o.out);
    if (o.folds) {
        pl::CrossValidation cv = pl::cross_validate(c, graphs, logger(o));
        for (std::size_t k = 0; k < cv.folds.size(); ++k) {
            const fs::path dir = out / ("fold" + std::to_string(k));
            fs::create_directories(dir);
            model::save_model(dir / "model", cv.folds[k].trained.model, {{"run_config", cfg}, {"fold", k}});
            write_text(dir / "history.csv", model::history_csv(cv.folds[k].trained.history));
            write_evaluation(dir, cv.folds[k].test, cfg);
        }
        json summary = cv.summary;
        summary["run_config"] = cfg;
        summary["fold_of"] = json::object();
        for (std::size_t i = 0; i < ds.slides.size(); ++i) summary["fold_of"][ds.slides[i].id] = cv.fold_of[i];
        write_json(out / "cv_summary.json", summary);
        if (auto log = logger(o)) {
            std::ostringstream os;
            os << "cross-validated accuracy " << cv.summary["accuracy"]["mean"].get<double>() << " +/- "
               << cv.summary["accuracy"]["std"].get<double>();
            log(os.str());
        }
    } else {
        auto train_set = by_split(ds, graphs, "train");
        model::TrainResult r = model::train(train_set, c.model, c.train);
        fs::create_directories(out);
        model::save_model(out / "model", r.model, {{"run_config", cfg}});
        write_text(out / "history.csv", model::history_csv(r.history));
        const pl::Evaluation ev = pl::evaluate(r.model, by_split(ds, graphs, "test"));
        write_evaluation(out, ev, cfg);
        if (auto log = logger(o)) log("test accuracy " + std::to_string(ev.report.confusion.accuracy));
    }
    echo(out, cfg);
    return 0;
}

int cmd_eval(const Options& o) {
    const pl::RunConfig c = load_config(o);
    const synth::Dataset ds = open_dataset(o);
    require_dir(o.graphs, "graphs");
    require_dir(o.model, "model");
    const model::GtpModel m = model::load_model(o.model);
    const std::vector<graph::WsiGraph> graphs = pl::load_graphs(o.graphs, ds);
    const pl::Evaluation ev = pl::evaluate(m, by_split(ds, graphs, o.split));
    const json cfg = pl::to_json(c);
    fs::create_directories(o.out);
    write_evaluation(o.out, ev, cfg);
    echo(o.out, cfg);
    if (auto log = logger(o)) log(o.split + " accuracy " + std::to_string(ev.report.confusion.accuracy));
    return 0;
}

int cmd_explain(const Options& o) {
    const pl::RunConfig c = load_config(o);
    const synth::Dataset ds = open_dataset(o);
    require_dir(o.graphs, "graphs");
    require_dir(o.model, "model");
    const synth::SlideEntry entry = select(ds, o.slide).front();
    const model::GtpModel m = model::load_model(o.model);
    const graph::WsiGraph g = graph::load_graph(fs::path(o.graphs) / entry.id);
    const synth::Slide slide = synth::load_slide(o.data, entry, c.dataset.patch_size);
    const int target = o.target_class.value_or(slide.class_label);
    pl::Explanation ex = pl::explain_slide(c, m, g, slide, target);
    const json cfg = pl::to_json(c);
    ex.sidecar["run_config"] = cfg;
    explain::write_heatmap(o.out, entry.id + "_class" + std::to_string(target), ex.heatmap, ex.sidecar);
    echo(o.out, cfg);
    if (auto log = logger(o)) {
        std::ostringstream os;
        os << entry.id << " class " << target << " p=" << ex.sidecar["class_probability"].get<double>() << " max IoU "
           << ex.iou.max_iou << " at " << ex.iou.argmax_threshold;
        log(os.str());
    }
    return 0;
}

int cmd_ablate(const Options& o) {
    const pl::RunConfig base = load_config(o);
    const synth::Dataset ds = open_dataset(o);
    require_dir(o.graphs, "graphs");
    const std::vector<graph::WsiGraph> graphs = pl::load_graphs(o.graphs, ds);
    const auto train_set = by_split(ds, graphs, "train");
    const auto test_set = by_split(ds, graphs, "test");
    json rows = json::array();
    std::ostringstream csv;
    csv.precision(6);
    csv << "pooled_nodes,gc_layers,blocks,accuracy,mean_auc\n";
    for (int nt : base.ablation.pooled_nodes)
        for (int gc : base.ablation.gc_layers)
            for (int l : base.ablation.blocks) {
                pl::RunConfig c = base;
                c.model.pooled_nodes = nt;
                c.model.gc_layers = gc;
                c.model.blocks = l;
                c.validate();
                model::TrainResult r = model::train(train_set, c.model, c.train);
                const pl::Evaluation ev = pl::evaluate(r.model, test_set);
                double auc = 0.0;
                for (const auto& roc : ev.report.roc) auc += roc.auc / 3.0;
                rows.push_back({{"pooled_nodes", nt},
                                {"gc_layers", gc},
                                {"blocks", l},
                                {"accuracy", ev.report.confusion.accuracy},
                                {"mean_auc", auc}});
                csv << nt << ',' << gc << ',' << l << ',' << ev.report.confusion.accuracy << ',' << auc << '\n';
                if (auto log = logger(o)) {
                    log("N_t=" + std::to_string(nt) + " M=" + std::to_string(gc) + " L=" + std::to_string(l) +
                        " accuracy " + std::to_string(ev.report.confusion.accuracy));
                }
            }
    const json cfg = pl::to_json(base);
    fs::create_directories(o.out);
    write_json(fs::path(o.out) / "ablation.json", {{"rows", rows}, {"run_config", cfg}});
    write_text(fs::path(o.out) / "ablation.csv", csv.str());
    echo(o.out, cfg);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gtp: graph-transformer whole-slide classification and GraphCAM saliency"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "run config JSON")->check(CLI::ExistingFile);
    app.add_flag("-q,--quiet", o.quiet, "no progress output");

    auto* synth = app.add_subcommand("synth", "render the synthetic slide dataset");
    synth->add_option("--out", o.out, "dataset directory")->required();
    synth->add_option("--slides", o.slides, "number of slides");
    synth->add_option("--seed", o.seed, "dataset seed");

    auto* tile = app.add_subcommand("tile", "tile slides and write kept patches");
    tile->add_option("--data", o.data)->required();
    tile->add_option("--out", o.out)->required();
    tile->add_option("--slide", o.slide, "one slide id (default all)");

    auto* pretrain = app.add_subcommand("pretrain", "contrastive pretraining of the patch encoder");
    pretrain->add_option("--data", o.data)->required();
    pretrain->add_option("--out", o.out, "encoder checkpoint directory")->required();
    pretrain->add_option("--seed", o.seed);

    auto* embed = app.add_subcommand("embed", "embed kept patches of every slide");
    embed->add_option("--data", o.data)->required();
    embed->add_option("--encoder", o.encoder)->required();
    embed->add_option("--out", o.out)->required();
    embed->add_option("--slide", o.slide);

    auto* build = app.add_subcommand("build-graph", "build slide graphs from embeddings");
    build->add_option("--embeddings", o.embeddings)->required();
    build->add_option("--out", o.out)->required();
    build->add_option("--slide", o.slide);

    auto* train = app.add_subcommand("train", "train the graph-transformer");
    train->add_option("--data", o.data)->required();
    train->add_option("--graphs", o.graphs)->required();
    train->add_option("--out", o.out)->required();
    train->add_option("--folds", o.folds, "k-fold cross-validation over all slides")->check(CLI::Range(2, 100));
    train->add_option("--seed", o.seed);

    auto* eval = app.add_subcommand("eval", "evaluate a trained model");
    eval->add_option("--data", o.data)->required();
    eval->add_option("--graphs", o.graphs)->required();
    eval->add_option("--model", o.model)->required();
    eval->add_option("--out", o.out)->required();
    eval->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test", "all"}));

    auto* explain = app.add_subcommand("explain", "GraphCAM heatmap for one slide");
    explain->add_option("--data", o.data)->required();
    explain->add_option("--graphs", o.graphs)->required();
    explain->add_option("--model", o.model)->required();
    explain->add_option("--slide", o.slide)->required();
    explain->add_option("--class", o.target_class, "target class (default: slide label)")->check(CLI::Range(0, 2));
    explain->add_option("--out", o.out)->required();

    auto* ablate = app.add_subcommand("ablate", "sweep pooled nodes, GC layers and blocks");
    ablate->add_option("--data", o.data)->required();
    ablate->add_option("--graphs", o.graphs)->required();
    ablate->add_option("--out", o.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(o);
        if (tile->parsed()) return cmd_tile(o);
        if (pretrain->parsed()) return cmd_pretrain(o);
        if (embed->parsed()) return cmd_embed(o);
        if (build->parsed()) return cmd_build_graph(o);
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o);
        if (explain->parsed()) return cmd_explain(o);
        if (ablate->parsed()) return cmd_ablate(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
