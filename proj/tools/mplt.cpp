// Command-line entry points: synth, train-toy, track, eval, bench,
// gradcheck, dump-attention.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>

#include "mplt/mplt.hpp"

namespace fs = std::filesystem;
using namespace mplt;

namespace {

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    bool no_mvip = false, no_sa = false, no_ta = false, no_tu = false, no_kf = false;
};

/// D=64, L=3, 32² template, 64² search: trains in minutes on one core.
ModelConfig toy_model_config() {
    ModelConfig c;
    c.patch_size = 8;
    c.embed_dim = 64;
    c.num_layers = 3;
    c.num_heads = 4;
    c.mlp_ratio = 2;
    c.template_height = c.template_width = 32;
    c.search_size = 64;
    c.reduction_ratio = 16;
    c.head_channels = 32;
    return c;
}

void add_common(CLI::App* cmd, Common& o, bool ablations) {
    cmd->add_option("--config", o.config_path, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_set = true; }, "random seed");
    cmd->add_option("--out", o.out, "output path");
    if (!ablations) return;
    cmd->add_flag("--no-mvip", o.no_mvip, "remove all prompters (implies --no-sa --no-ta)");
    cmd->add_flag("--no-sa", o.no_sa, "prompters without spatial attention");
    cmd->add_flag("--no-ta", o.no_ta, "prompters without token attention");
    cmd->add_flag("--no-tu", o.no_tu, "disable confidence-gated template update");
    cmd->add_flag("--no-kf", o.no_kf, "disable Kalman correction");
}

/// Config file (or `fallback` model settings), then command-line overrides.
RunConfig resolve(const Common& o, const ModelConfig& fallback) {
    RunConfig run;
    if (!o.config_path.empty())
        run = load_config(o.config_path);
    else
        run.model = fallback;
    if (o.seed_set) run.seed = o.seed;
    if (!o.out.empty()) run.output = o.out;
    if (o.no_mvip) run.model.use_mvip = false;
    if (o.no_sa) run.model.use_spatial_attn = false;
    if (o.no_ta) run.model.use_token_attn = false;
    if (o.no_tu) run.model.use_template_update = false;
    if (o.no_kf) run.model.use_kalman = false;
    run.validate();
    return run;
}

std::vector<fs::path> sequence_dirs(const fs::path& root) {
    if (fs::is_directory(root / "visible")) return {root};
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::is_directory(e.path() / "visible")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw IoError("no sequence directories under " + root.string());
    return dirs;
}

std::vector<SequenceRecord> load_all(const fs::path& root) {
    std::vector<SequenceRecord> out;
    for (const auto& d : sequence_dirs(root)) out.push_back(load_sequence(d));
    return out;
}

std::vector<SequenceRecord> synth_corpus(std::uint64_t seed, std::size_t count, std::size_t frames, bool low_light) {
    std::mt19937_64 rng(seed);
    std::vector<SequenceRecord> out;
    for (std::size_t i = 0; i < count; ++i) {
        auto spec = random_synth_spec(rng, frames, low_light);
        char name[32];
        std::snprintf(name, sizeof name, "synth_%03zu", i);
        spec.name = name;
        out.push_back(synth_sequence(spec, rng()));
    }
    return out;
}

int cmd_synth(const Common& o, std::size_t count, std::size_t frames, bool low_light) {
    if (o.out.empty()) throw CLI::ValidationError("--out", "synth needs an output directory");
    for (const auto& seq : synth_corpus(o.seed, count, frames, low_light)) {
        write_sequence(fs::path(o.out) / seq.name, seq);
        std::printf("wrote %s (%zu frames)\n", (fs::path(o.out) / seq.name).c_str(), seq.size());
    }
    return 0;
}

int cmd_train(const Common& o, const std::string& sequences, std::size_t steps, double lr_backbone, double lr_other,
              std::size_t count, std::size_t frames) {
    auto run = resolve(o, toy_model_config());
    if (run.output.empty()) throw CLI::ValidationError("--out", "train-toy needs a checkpoint path");
    const auto data = sequences.empty() ? synth_corpus(run.seed, count, frames, true) : load_all(sequences);
    auto model = Model<double>::create(run.model, run.seed);
    TrainOptions t;
    t.steps = steps ? steps : run.steps;
    t.batch_size = run.batch_size;
    t.lr_backbone = lr_backbone > 0 ? lr_backbone : run.lr_backbone;
    t.lr_other = lr_other > 0 ? lr_other : run.lr_other;
    t.weight_decay = run.weight_decay;
    t.seed = run.seed;
    t.pairs.center_jitter = 0.25;
    t.pairs.scale_jitter = 0.15;
    t.pairs.template_context = run.template_context;
    t.pairs.search_context = run.search_context;
    t.on_step = [&](std::size_t step, double loss) {
        if (step % 50 == 0 || step + 1 == t.steps) std::printf("step %5zu  loss %.6f\n", step, loss);
        std::fflush(stdout);
    };
    train(model, data, t);
    run.steps = t.steps;
    run.lr_backbone = t.lr_backbone;
    run.lr_other = t.lr_other;
    save_checkpoint(model, run, run.output);
    std::printf("saved %s\n", run.output.c_str());
    return 0;
}

template <typename Real>
int track_all(const Model<Real>& model, const RunConfig& run, const std::vector<fs::path>& dirs) {
    const auto options = TrackerOptions::from(run);
    fs::create_directories(run.output);
    for (const auto& dir : dirs) {
        const auto seq = load_sequence(dir);
        const auto r = track_sequence(seq, model, options);
        write_results(r.boxes, fs::path(run.output) / (seq.name + ".txt"));
        std::printf("%-24s %4zu frames  %7.2f fps  %zu template updates  %zu corrections\n", seq.name.c_str(),
                    seq.size(), r.frames_per_second(), r.template_updates, r.corrections);
    }
    return 0;
}

int cmd_track(const Common& o, const std::string& checkpoint, const std::string& sequences, bool fast) {
    if (o.out.empty()) throw CLI::ValidationError("--out", "track needs a results directory");
    const auto stored = load_config(checkpoint + ".config");
    Common merged = o;
    auto run = resolve(merged, stored.model);
    if (o.config_path.empty()) {
        // Tracker settings come from the checkpoint snapshot unless a config is given.
        const auto flags = run.model;
        run = stored;
        run.model.use_template_update = flags.use_template_update;
        run.model.use_kalman = flags.use_kalman;
        run.output = o.out;
    }
    if (o.no_mvip || o.no_sa || o.no_ta)
        std::fprintf(stderr, "note: prompter flags are fixed by the checkpoint and ignored by track\n");
    const auto dirs = sequence_dirs(sequences);
    if (fast) return track_all(load_checkpoint<float>(checkpoint, stored.model), run, dirs);
    return track_all(load_checkpoint<double>(checkpoint, stored.model), run, dirs);
}

int cmd_eval(const Common& o, const std::string& results, const std::string& sequences) {
    std::vector<std::string> names;
    std::vector<std::vector<BBox>> preds, gts;
    for (const auto& dir : sequence_dirs(sequences)) {
        const auto gt_bytes = [&] {
            std::ifstream in(dir / "groundtruth.txt");
            if (!in) throw IoError("missing " + (dir / "groundtruth.txt").string());
            return std::string(std::istreambuf_iterator<char>(in), {});
        }();
        names.push_back(dir.filename().string());
        gts.push_back(parse_ground_truth(gt_bytes));
        preds.push_back(read_results(fs::path(results) / (names.back() + ".txt")));
    }
    const auto report = evaluate(names, preds, gts);
    std::printf("%-24s %7s %7s %7s\n", "sequence", "frames", "PR", "SR");
    for (const auto& s : report.sequences)
        std::printf("%-24s %7zu %7.4f %7.4f\n", s.name.c_str(), s.frames, s.precision, s.success);
    std::printf("%-24s %7s %7.4f %7.4f\n", "overall", "", report.precision, report.success);
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::vector<double> pt, st;
        for (std::size_t i = 0; i < report.precision_curve.size(); ++i) pt.push_back(static_cast<double>(i));
        for (std::size_t i = 0; i < kSuccessSteps; ++i) st.push_back(success_threshold(i));
        write_curve(fs::path(o.out) / "precision.txt", pt, report.precision_curve);
        write_curve(fs::path(o.out) / "success.txt", st, report.success_curve);
    }
    return 0;
}

int cmd_bench(const Common& o) {
    const auto run = resolve(o, ModelConfig{});
    const auto& c = run.model;
    const auto params = count_params(c);
    std::printf("parameters (D=%zu, L=%zu, N=%zu, r=%zu)\n", c.embed_dim, c.num_layers, c.tokens(), c.reduction_ratio);
    std::map<std::string, std::size_t> grouped;
    std::vector<std::string> order;
    for (const auto& r : params.rows) {
        std::string key = r.module;
        if (key.rfind("encoder", 0) == 0) key = key.substr(0, key.find_last_of('.'));
        if (key.rfind("prompter", 0) == 0) key = "prompter";
        if (!grouped.count(key)) order.push_back(key);
        grouped[key] += r.count;
    }
    for (const auto& k : order) std::printf("  %-20s %14zu\n", k.c_str(), grouped[k]);
    std::printf("  %-20s %14zu\n", "total", params.total);
    const auto pc = prompter_param_count(c);
    const auto layer = encoder_layer_params(c);
    std::printf("  per-layer prompters (both directions) %zu = %.3f%% of one encoder layer (%zu)\n", pc.per_layer_both,
                100.0 * static_cast<double>(pc.per_layer_both) / static_cast<double>(layer), layer);

    for (bool single : {false, true}) {
        const auto t = count_flops(c, single);
        std::printf("%s MACs\n", single ? "single-branch" : "full model");
        std::map<std::string, std::size_t> rows;
        std::vector<std::string> seen;
        for (const auto& r : t.rows) {
            if (!rows.count(r.module)) seen.push_back(r.module);
            rows[r.module] += r.macs;
        }
        for (const auto& k : seen) std::printf("  %-20s %14.4f G\n", k.c_str(), static_cast<double>(rows[k]) / 1e9);
        std::printf("  %-20s %14.4f G MACs  (%.4f G FLOPs at 2 per MAC)\n", "total", static_cast<double>(t.macs) / 1e9,
                    static_cast<double>(t.flops()) / 1e9);
    }
    return 0;
}

int cmd_gradcheck(const Common& o) {
    bool ok = true;
    run_gradcheck_suite(o.seed, [&](const GradCheckCase& c) {
        ok &= c.passed();
        std::printf("%-4s %-30s max rel error %.3e over %6zu elements (%.1fs)\n", c.passed() ? "ok" : "FAIL",
                    c.name.c_str(), c.result.max_rel_error, c.result.elements_checked, c.seconds);
        std::fflush(stdout);
    });
    std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check failures");
    return ok ? 0 : 1;
}

int cmd_dump_attention(const Common& o, const std::string& checkpoint, const std::string& sequence, std::size_t frame,
                       std::size_t layer) {
    if (o.out.empty()) throw CLI::ValidationError("--out", "dump-attention needs an output directory");
    const auto model = load_checkpoint<double>(checkpoint);
    const auto run = load_config(checkpoint + ".config");
    const auto seq = load_sequence(sequence);
    if (frame >= seq.size()) throw std::out_of_range("frame index beyond sequence length");
    const Image r0 = to_unit(seq.rgb[0]), t0 = to_unit(seq.tir[0]);
    const Image rf = to_unit(seq.rgb[frame]), tf = to_unit(seq.tir[frame]);
    const auto& c = model.config();
    const BBox& first = seq.ground_truth[0];
    const BBox& anchor = seq.ground_truth[frame];
    CropSet crops{standardize(crop_region(r0, first, run.template_context, c.template_height, c.template_width).image),
                  standardize(crop_region(t0, first, run.template_context, c.template_height, c.template_width).image),
                  standardize(crop_region(rf, anchor, run.search_context, c.search_size).image),
                  standardize(crop_region(tf, anchor, run.search_context, c.search_size).image)};
    const auto maps = export_attention(model, crops, layer, o.out);
    std::printf("wrote %zux%zu attention grids for layer %zu to %s\n", maps.grid, maps.grid, layer, o.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RGB-T tracking with multi-modal mutual prompts"};
    app.require_subcommand(1);
    Common o;

    auto* synth = app.add_subcommand("synth", "generate synthetic RGB-T sequences");
    add_common(synth, o, false);
    std::size_t count = 4, frames = 40;
    bool low_light = false;
    synth->add_option("--count", count, "number of sequences");
    synth->add_option("--frames", frames, "frames per sequence");
    synth->add_flag("--low-light", low_light, "RGB low-illumination segment over the last 80% of frames");

    auto* train_cmd = app.add_subcommand("train-toy", "train a small model on synthetic or loaded sequences");
    add_common(train_cmd, o, true);
    std::string sequences;
    std::size_t steps = 0, train_count = 8;
    double lr_backbone = 3e-4, lr_other = 3e-3;
    train_cmd->add_option("--sequences", sequences, "sequence directory (default: synthetic low-light corpus)");
    train_cmd->add_option("--steps", steps, "gradient steps (default: config value)");
    train_cmd->add_option("--lr-backbone", lr_backbone, "backbone learning rate");
    train_cmd->add_option("--lr-other", lr_other, "prompter/fusion/head learning rate");
    train_cmd->add_option("--count", train_count, "synthetic sequences when --sequences is absent");
    train_cmd->add_option("--frames", frames, "frames per synthetic sequence");

    auto* track = app.add_subcommand("track", "run the tracker over sequence directories");
    add_common(track, o, true);
    std::string checkpoint;
    bool fast = false;
    track->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    track->add_option("--sequences", sequences, "a sequence directory or a directory of them")->required();
    track->add_flag("--fast", fast, "single-precision inference");

    auto* eval = app.add_subcommand("eval", "precision/success of result files against ground truth");
    add_common(eval, o, false);
    std::string results;
    eval->add_option("--results", results, "directory of <sequence>.txt result files")->required();
    eval->add_option("--sequences", sequences, "sequence directories with groundtruth.txt")->required();

    auto* bench = app.add_subcommand("bench", "parameter and MAC tables");
    add_common(bench, o, true);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    add_common(gradcheck, o, false);

    auto* dump = app.add_subcommand("dump-attention", "export template-to-search attention grids");
    add_common(dump, o, false);
    std::size_t frame = 1, layer = 1;
    dump->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    dump->add_option("--sequence", sequences, "sequence directory")->required();
    dump->add_option("--frame", frame, "search frame index");
    dump->add_option("--layer", layer, "encoder layer (1-based)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) std::cerr << app.help();
        return app.exit(e);
    }

    try {
        if (*synth) return cmd_synth(o, count, frames, low_light);
        if (*train_cmd) return cmd_train(o, sequences, steps, lr_backbone, lr_other, train_count, frames);
        if (*track) return cmd_track(o, checkpoint, sequences, fast);
        if (*eval) return cmd_eval(o, results, sequences);
        if (*bench) return cmd_bench(o);
        if (*gradcheck) return cmd_gradcheck(o);
        if (*dump) return cmd_dump_attention(o, checkpoint, sequences, frame, layer);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
