// hydra: command-line front end.
//
// Exit codes: 0 success, 1 usage, 2 data/config error, 3 numeric error.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "hydra/hydra.hpp"

namespace {

using namespace hydra;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct Options {
    std::string config;
    std::string scene;
    std::string plant;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string cube;
    std::string stack;
    std::string camera;
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string history;
    std::size_t samples = 0;
    bool blackout = false;
    double wind = 0.0;
    unsigned threads = 0;
    bool quiet = false;
};

RunConfig config_for(const Options& o) {
    RunConfig rc = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.threads > 0) {
        rc.hyper.threads = o.threads;
        rc.dataset.threads = o.threads;
    }
    return rc;
}

void note(const Options& o, const std::string& msg) {
    if (!o.quiet) std::cerr << msg << '\n';
}

// Dataset from --data when given, otherwise synthesized from the config.
std::vector<Sample> dataset_for(const Options& o, const RunConfig& rc, const FocusingFilters& filters) {
    if (!o.data.empty()) {
        auto loaded = load_dataset(o.data);
        if (loaded.config.dataset.depths() != rc.dataset.depths() ||
            !(loaded.config.dataset.geometry == rc.dataset.geometry) ||
            !(loaded.config.dataset.radar == rc.dataset.radar))
            throw ConfigError("dataset " + o.data + " was generated with a different radar, geometry or depth grid");
        return std::move(loaded.samples);
    }
    note(o, "synthesizing " + std::to_string(rc.samples) + " samples");
    return synth_dataset(rc.samples, rc.dataset, rc.data_seed, &filters);
}

int cmd_simulate(const Options& o) {
    RunConfig rc = config_for(o);
    Scene scene;
    if (!o.scene.empty() && !o.plant.empty()) throw ConfigError("simulate: give --scene or --plant, not both");
    if (!o.plant.empty()) {
        if (o.plant != "dry" && o.plant != "wet") throw ConfigError("--plant must be dry or wet");
        scene = make_plant(o.plant == "wet" ? Wetness::Wet : Wetness::Dry, o.seed, rc.dataset.plant).scene;
    } else {
        const fs::path path = !o.scene.empty() ? fs::path(o.scene) : rc.scene_file.value_or(fs::path{});
        if (path.empty()) throw ConfigError("simulate: no scene (use --scene, --plant or scene.file)");
        std::istringstream in(read_file(path));
        scene = parse_scene(in);
    }
    const RawDataCube raw = simulate_scan(scene, rc.dataset.geometry, rc.dataset.radar, rc.dataset.threads);
    write_tensor(to_tensor(raw), o.out);
    note(o, "wrote " + o.out + " (" + std::to_string(scene.scatterers.size()) + " scatterers)");
    return 0;
}

int cmd_reconstruct(const Options& o) {
    RunConfig rc = config_for(o);
    const auto& d = rc.dataset;
    const RawDataCube raw = phase_compensate(cube_from_tensor(read_tensor(o.cube), d.geometry, d.radar, false));
    const FocusingFilters filters(d.geometry, d.radar, d.depths());
    const DepthStack stack = depth_stack(raw, filters);
    if (!all_finite(to_tensor(stack).as_f64())) throw NumericError("reconstruction produced non-finite pixels");
    fs::create_directories(o.out);
    const DepthStack norm = normalize_stack(stack);
    for (std::size_t i = 0; i < norm.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_%02zu.pgm", i);
        write_pgm(norm.slices[i].image, fs::path(o.out) / name);
    }
    write_tensor(to_tensor(stack), fs::path(o.out) / "stack.hyt");
    note(o, "wrote " + std::to_string(stack.size()) + " slices to " + o.out);
    return 0;
}

int cmd_fuse(const Options& o) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const auto& d = ck.config.dataset;
    const auto grid = PixelGrid::for_geometry(d.geometry);
    const DepthStack stack = normalize_stack(stack_from_tensor(read_tensor(o.stack), d.depths(), grid.extent()));
    if (stack.slices.front().image.width != grid.width || stack.slices.front().image.height != grid.height)
        throw DataError("fuse: stack raster does not match the checkpoint geometry");
    const RgbImage frame = read_ppm(o.camera);
    const RgbImage rgb = crop_fov(frame, d.calibration());
    fs::create_directories(o.out);

    const double alpha = *ck.params.value(ck.params.alpha());
    std::vector<double> fused;
    ModelInput in;
    in.rgb = &rgb;
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const auto& sl = stack.slices[i];
        const FusedImage f = detail::fuse_for(sl.image, rgb, alpha, ck.params.config().modality);
        fused.insert(fused.end(), f.channels.data.begin(), f.channels.data.end());
        char name[32];
        std::snprintf(name, sizeof name, "cam_%02zu.pgm", i);
        write_pgm(slice_cam(sl.image, rgb, ck.params), fs::path(o.out) / name);
        in.depths.push_back(sl.z0);
        in.sar.push_back(&sl.image);
    }
    write_tensor(Tensor::f64(Tensor::to_dims({stack.size(), 4, grid.height, grid.width}), fused),
                 fs::path(o.out) / "fused.hyt");
    const double p = model_forward(in, ck.params);
    std::cout << "p_wet = " << format_double(p) << "\nlabel = " << (p >= 0.5 ? "wet" : "dry") << '\n';
    return 0;
}

int cmd_train(const Options& o) {
    RunConfig rc = config_for(o);
    const auto filters = make_filters(rc.dataset);
    const auto data = dataset_for(o, rc, *filters);
    const auto result = train(data, rc.hyper, filters.get(), [&](const EpochRecord& e) {
        note(o, "phase " + std::to_string(e.phase) + " epoch " + std::to_string(e.epoch) + "  loss " +
                    format_double(e.loss) + "  accuracy " + format_double(e.accuracy));
    });
    save_checkpoint(o.out, rc, result.params);
    const fs::path history = o.history.empty() ? fs::path(o.out) / "history.csv" : fs::path(o.history);
    write_file_atomic(history, history_csv(result.history));
    const auto& last = result.history.back();
    std::cout << "final training accuracy " << format_double(last.accuracy) << '\n';
    return 0;
}

int cmd_eval(const Options& o) {
    const Checkpoint ck = load_checkpoint(o.checkpoint);
    const auto loaded = load_dataset(o.data);
    if (loaded.config.dataset.depths() != ck.config.dataset.depths() ||
        !(loaded.config.dataset.geometry == ck.config.dataset.geometry))
        throw ConfigError("eval: dataset and checkpoint use different geometry or depth grids");
    if (o.wind < 0.0) throw ConfigError("--wind must be >= 0");
    EvalConditions cond{o.blackout, o.wind, o.seed};
    const unsigned threads = o.threads > 0 ? o.threads : ck.config.hyper.threads;
    const Metrics m = evaluate(ck.params, loaded.samples, cond, nullptr, threads);
    std::string csv = "rgb_blackout,wind_mm,n,tp,tn,fp,fn,accuracy\n";
    csv += std::string(o.blackout ? "1" : "0") + "," + format_double(o.wind) + "," + std::to_string(m.total()) + "," +
           std::to_string(m.tp) + "," + std::to_string(m.tn) + "," + std::to_string(m.fp) + "," +
           std::to_string(m.fn) + "," + format_double(m.accuracy) + "\n";
    if (!o.out.empty()) write_file_atomic(o.out, csv);
    std::cout << "accuracy " << format_double(m.accuracy) << " (" << m.tp + m.tn << "/" << m.total() << ")\n";
    return 0;
}

int cmd_crossval(const Options& o) {
    RunConfig rc = config_for(o);
    const auto filters = make_filters(rc.dataset);
    const auto data = dataset_for(o, rc, *filters);
    std::string csv = metrics_csv_header();
    const CvResult cv = kfold_cv(data, rc.folds, rc.repeats, rc.hyper, rc.cv_seed, filters.get(),
                                 [&](const FoldResult& f) {
                                     csv += metrics_csv_row(f.repeat, f.fold, f.metrics);
                                     note(o, "repeat " + std::to_string(f.repeat) + " fold " + std::to_string(f.fold) +
                                                 "  accuracy " + format_double(f.metrics.accuracy));
                                 });
    if (!o.out.empty()) write_file_atomic(o.out, csv);
    std::cout << "accuracy " << format_percent(cv.accuracy) << '\n'
              << summary_json(cv.accuracy, to_string(rc.hyper.model.modality), rc.folds, rc.repeats) << '\n';
    return 0;
}

int cmd_synth(const Options& o) {
    RunConfig rc = config_for(o);
    if (o.samples > 0) rc.samples = o.samples;
    if (o.seed_set) rc.data_seed = o.seed;
    rc.validate();
    const auto filters = make_filters(rc.dataset);
    const auto data = synth_dataset(rc.samples, rc.dataset, rc.data_seed, filters.get());
    save_dataset(o.out, rc, data);
    note(o, "wrote " + std::to_string(data.size()) + " samples to " + o.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hydra: SAR/RGB leaf wetness pipeline"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("-q,--quiet", o.quiet, "Suppress progress on stderr");

    auto add_threads = [&](CLI::App* c) {
        c->add_option("--threads", o.threads, "Worker threads (overrides the config)")->check(CLI::Range(1u, 256u));
    };

    auto* sim = app.add_subcommand("simulate", "Scene + geometry -> raw cube (HYT1 c128 [nx, ny, nf])");
    sim->add_option("-c,--config", o.config, "Run configuration");
    sim->add_option("--scene", o.scene, "Scene text file");
    sim->add_option("--plant", o.plant, "Synthesize a dry or wet plant instead of reading a scene");
    sim->add_option("--seed", o.seed, "Plant seed");
    sim->add_option("-o,--out", o.out, "Output cube")->required();
    add_threads(sim);

    auto* rec = app.add_subcommand("reconstruct", "Raw cube -> depth stack (stack.hyt + slice PGMs)");
    rec->add_option("-c,--config", o.config, "Run configuration");
    rec->add_option("--cube", o.cube, "Uncompensated raw cube")->required();
    rec->add_option("-o,--out", o.out, "Output directory")->required();

    auto* fuse = app.add_subcommand("fuse", "Depth stack + camera frame -> fused tensors, CAMs and P(wet)");
    fuse->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
    fuse->add_option("--stack", o.stack, "stack.hyt from reconstruct")->required();
    fuse->add_option("--camera", o.camera, "Camera frame (PPM)")->required();
    fuse->add_option("-o,--out", o.out, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Config (+ dataset) -> checkpoint and history CSV");
    tr->add_option("-c,--config", o.config, "Run configuration");
    tr->add_option("--data", o.data, "Dataset directory from synth (default: synthesize)");
    tr->add_option("-o,--out", o.out, "Checkpoint directory")->required();
    tr->add_option("--history", o.history, "History CSV (default: <checkpoint>/history.csv)");
    add_threads(tr);

    auto* ev = app.add_subcommand("eval", "Checkpoint + dataset -> metrics CSV");
    ev->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
    ev->add_option("--data", o.data, "Dataset directory")->required();
    ev->add_flag("--rgb-blackout", o.blackout, "Zero the camera image");
    ev->add_option("--wind", o.wind, "Wind amplitude, mm");
    ev->add_option("--seed", o.seed, "Wind seed");
    ev->add_option("-o,--out", o.out, "Metrics CSV");
    add_threads(ev);

    auto* cv = app.add_subcommand("crossval", "Repeated stratified k-fold cross-validation");
    cv->add_option("-c,--config", o.config, "Run configuration");
    cv->add_option("--data", o.data, "Dataset directory from synth (default: synthesize)");
    cv->add_option("-o,--out", o.out, "Per-fold metrics CSV");
    add_threads(cv);

    auto* sy = app.add_subcommand("synth", "Config -> synthetic dataset directory");
    sy->add_option("-c,--config", o.config, "Run configuration");
    sy->add_option("--samples", o.samples, "Override scene.samples");
    sy->add_option("--seed", o.seed, "Override scene.seed")->each([&](const std::string&) { o.seed_set = true; });
    sy->add_option("-o,--out", o.out, "Output directory")->required();
    add_threads(sy);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*sim) return cmd_simulate(o);
        if (*rec) return cmd_reconstruct(o);
        if (*fuse) return cmd_fuse(o);
        if (*tr) return cmd_train(o);
        if (*ev) return cmd_eval(o);
        if (*cv) return cmd_crossval(o);
        if (*sy) return cmd_synth(o);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::bad_alloc&) {
        std::cerr << "error: out of memory\n";
        return kExitData;
    }
    return kExitUsage;
}
