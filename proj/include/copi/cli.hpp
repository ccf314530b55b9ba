#pragma once

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "copi/copi.hpp"

namespace copi::cli {

namespace fs = std::filesystem;

// ---- shared option plumbing -------------------------------------------------

struct CommonOpts {
    std::string dataset = "mnist";
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::size_t subset = 0; // 0 = all training samples
};

inline void require_file(const fs::path& p) {
    if (!fs::exists(p)) throw FormatError("missing data file: " + p.string());
}

inline Dataset load_split(const CommonOpts& c, bool train_split) {
    if (c.dataset == "mnist") {
        const fs::path d = fs::path(c.data_dir) / "mnist";
        const std::string img = train_split ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
        const std::string lab = train_split ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
        require_file(d / img);
        require_file(d / lab);
        return load_mnist((d / img).string(), (d / lab).string());
    }
    if (c.dataset == "cifar10") {
        const fs::path d = fs::path(c.data_dir) / "cifar-10-batches-bin";
        std::vector<std::string> paths;
        if (train_split) {
            for (int b = 1; b <= 5; ++b) {
                const fs::path p = d / ("data_batch_" + std::to_string(b) + ".bin");
                require_file(p);
                paths.push_back(p.string());
            }
        } else {
            const fs::path p = d / "test_batch.bin";
            require_file(p);
            paths.push_back(p.string());
        }
        return load_cifar10(paths);
    }
    throw ConfigError("unknown dataset: " + c.dataset);
}

inline Dataset load_train(const CommonOpts& c) {
    Dataset ds = load_split(c, true);
    if (c.subset > 0 && c.subset < ds.n_samples()) ds = subset(ds, c.subset);
    return ds;
}

inline std::vector<std::size_t> parse_dims(const std::string& csv) {
    std::vector<std::size_t> dims;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        const long v = std::stol(tok);
        if (v <= 0) throw ConfigError("dims entries must be positive: " + csv);
        dims.push_back(static_cast<std::size_t>(v));
    }
    if (dims.size() < 2) throw ConfigError("dims needs at least input,output: " + csv);
    return dims;
}

inline std::string default_dims(const std::string& dataset) {
    if (dataset == "cifar10") return "3072,500,500,500,500,10";
    return "784,500,500,500,500,500,500,10";
}

/// Effective configuration of a parsed subcommand, one "key=value" per line;
/// goes into every output file as '#' comments for auditability.
inline std::vector<std::string> effective_config(const CLI::App* sub) {
    std::vector<std::string> lines;
    lines.push_back("command=" + sub->get_name());
    for (const CLI::Option* opt : sub->get_options()) {
        const std::string name = opt->get_name();
        if (name.empty() || name == "--help") continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
        } else {
            value = opt->get_default_str();
        }
        if (value.empty()) continue;
        lines.push_back(name.substr(2) + "=" + value);
    }
    return lines;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw FormatError("write failed: " + path.string());
}

// ---- train -------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string rule = "copi";
    std::string signal = "bp";
    std::string loss = "quadratic";
    std::string dims; // empty = dataset default
    TrainConfig cfg;  // eta/alpha/batch/epochs/warmup/seed defaults live here
    std::size_t seeds = 1;
};

inline Rule parse_rule(const std::string& s) {
    if (s == "copi") return Rule::Copi;
    if (s == "bio-copi") return Rule::BioCopi;
    if (s == "bp-decorr") return Rule::BpDecorr;
    if (s == "bp-adam") return Rule::BpAdam;
    throw ConfigError("unknown rule: " + s);
}

inline ErrorSignalMode parse_signal(const std::string& s) {
    if (s == "bp") return ErrorSignalMode::Backprop;
    if (s == "fa") return ErrorSignalMode::FeedbackAlignment;
    throw ConfigError("unknown signal: " + s);
}

inline LossKind parse_loss(const std::string& s) {
    if (s == "quadratic") return LossKind::Quadratic;
    if (s == "cross-entropy") return LossKind::CrossEntropy;
    throw ConfigError("unknown loss: " + s);
}

inline int cmd_train(const TrainOpts& opt, const std::vector<std::string>& config_lines) {
    const Dataset train_set = load_train(opt.common);
    const Dataset test_set = load_split(opt.common, false);

    TrainConfig cfg = opt.cfg;
    cfg.rule = parse_rule(opt.rule);
    cfg.signal = parse_signal(opt.signal);
    cfg.loss = parse_loss(opt.loss);

    const std::vector<std::size_t> dims =
        parse_dims(opt.dims.empty() ? default_dims(opt.common.dataset) : opt.dims);
    if (dims.front() != train_set.dim())
        throw ConfigError("dims input " + std::to_string(dims.front()) + " does not match dataset dim " +
                          std::to_string(train_set.dim()));
    if (dims.back() != train_set.n_classes())
        throw ConfigError("dims output does not match the dataset's class count");

    const fs::path out(opt.common.out_dir);
    fs::create_directories(out);

    struct SeedOutcome {
        double peak_test = 0, peak_train = 0;
        std::size_t epochs99 = 0;
    };
    std::vector<SeedOutcome> outcomes;

    for (std::size_t run = 0; run < opt.seeds; ++run) {
        const std::uint64_t run_seed =
            opt.seeds == 1 ? cfg.seed : Rng(cfg.seed).split(1000 + run).key();
        TrainConfig run_cfg = cfg;
        run_cfg.seed = run_seed;

        Rng net_rng(run_seed);
        InitSpec spec;
        spec.feedback = run_cfg.signal == ErrorSignalMode::FeedbackAlignment;
        Network net = build_network(net_rng, dims, Activation::leaky_relu(0.1), spec);

        std::cout << "[train] run " << run + 1 << "/" << opt.seeds << " seed=" << run_seed
                  << " rule=" << opt.rule << " signal=" << opt.signal << " loss=" << opt.loss << "\n";
        const TrainMetrics metrics =
            train(net, train_set, test_set, run_cfg, [](const EpochMetrics& r) {
                std::cout << "[train]   epoch " << r.epoch << (r.warmup ? " (warmup)" : "")
                          << ": train_acc " << r.train_acc << " train_loss " << r.train_loss
                          << " test_acc " << r.test_acc << " [" << static_cast<long>(r.seconds_elapsed)
                          << "s]" << std::endl;
            });

        std::vector<std::string> lines = config_lines;
        lines.push_back("run_seed=" + std::to_string(run_seed));
        std::ostringstream csv;
        metrics.write_csv(csv, lines);
        write_text_file(out / ("metrics_seed" + std::to_string(run) + ".csv"), csv.str());
        save_network((out / ("model_seed" + std::to_string(run) + ".copi")).string(), net);

        SeedOutcome oc;
        oc.peak_test = metrics.peak_test_acc();
        for (const auto& r : metrics.rows) oc.peak_train = std::max(oc.peak_train, r.train_acc);
        oc.epochs99 = metrics.joint_epochs_to_fraction_of_peak(0.99);
        outcomes.push_back(oc);
        if (!metrics.rows.empty())
            std::cout << "[train]   peak test acc " << oc.peak_test << ", 99% of peak at joint epoch "
                      << oc.epochs99 << "\n";
    }

    // Table-style aggregate: peak +- std and the mean epoch reaching 99% of peak.
    auto mean_std = [](auto get, const std::vector<SeedOutcome>& v) {
        double m = 0;
        for (const auto& o : v) m += get(o);
        m /= static_cast<double>(v.size());
        double s = 0;
        for (const auto& o : v) s += (get(o) - m) * (get(o) - m);
        s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
        return std::pair<double, double>{m, s};
    };
    const auto [pt_m, pt_s] = mean_std([](const SeedOutcome& o) { return o.peak_test; }, outcomes);
    const auto [tr_m, tr_s] = mean_std([](const SeedOutcome& o) { return o.peak_train; }, outcomes);
    const auto [e99_m, e99_s] =
        mean_std([](const SeedOutcome& o) { return static_cast<double>(o.epochs99); }, outcomes);

    std::ostringstream agg;
    for (const auto& c : config_lines) agg << "# " << c << "\n";
    agg << "n_seeds,peak_test_acc_mean,peak_test_acc_std,peak_train_acc_mean,peak_train_acc_std,"
           "epochs_to_99pct_mean,epochs_to_99pct_std\n";
    agg.precision(12);
    agg << opt.seeds << ',' << pt_m << ',' << pt_s << ',' << tr_m << ',' << tr_s << ',' << e99_m << ','
        << e99_s << "\n";
    write_text_file(out / "aggregate.csv", agg.str());
    std::cout << "[train] peak test acc " << pt_m << " +- " << pt_s << " over " << opt.seeds
              << " seed(s)\n";
    return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalOpts {
    CommonOpts common;
    std::string checkpoint;
    std::string split = "test";
    std::string loss = "quadratic";
};

inline int cmd_eval(const EvalOpts& opt) {
    const Dataset ds = opt.split == "train" ? load_train(opt.common) : load_split(opt.common, false);
    const CompressedNetwork cnet = load_compressed(opt.checkpoint);
    if (cnet.has_readout) {
        const double acc = evaluate_compressed(cnet, ds);
        std::cout << "accuracy=" << acc << " (readout checkpoint, loss not defined)\n";
        return 0;
    }
    Network net;
    net.layers = cnet.prefix;
    const auto [acc, loss] = evaluate(net, ds, parse_loss(opt.loss));
    std::cout << "accuracy=" << acc << " loss=" << loss << "\n";
    return 0;
}

// ---- compress -----------------------------------------------------------------

struct CompressOpts {
    CommonOpts common;
    std::string checkpoint;
    std::vector<std::size_t> keep_layers; // empty = L down to 0
};

inline int cmd_compress(const CompressOpts& opt, const std::vector<std::string>& config_lines) {
    const Network net = load_network(opt.checkpoint);
    const Dataset train_set = load_train(opt.common);
    const Dataset test_set = load_split(opt.common, false);

    std::vector<std::size_t> keeps = opt.keep_layers;
    if (keeps.empty())
        for (std::size_t k = net.depth() + 1; k-- > 0;) keeps.push_back(k);

    const fs::path out(opt.common.out_dir);
    fs::create_directories(out);
    std::ostringstream csv;
    for (const auto& c : config_lines) csv << "# " << c << "\n";
    csv << "keep_layers,test_acc,fit_seconds\n";
    csv.precision(12);

    for (std::size_t k : keeps) {
        const auto t0 = std::chrono::steady_clock::now();
        const CompressedNetwork cnet = compress(net, train_set, k);
        const double fit_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double acc = evaluate_compressed(cnet, test_set);
        save_compressed((out / ("compressed_k" + std::to_string(k) + ".copi")).string(), cnet);
        csv << k << ',' << acc << ',' << fit_s << "\n";
        std::cout << "[compress] keep=" << k << " test_acc=" << acc << " fit_s=" << fit_s << "\n";
    }
    write_text_file(out / "compress.csv", csv.str());
    return 0;
}

// ---- features -----------------------------------------------------------------

struct FeaturesOpts {
    CommonOpts common;
    std::string checkpoint;
    std::vector<std::size_t> layers; // empty = all
    std::size_t max_units = 100;
};

/// Display layout of one feature vector row: MNIST is 28x28; CIFAR-10's
/// channel-planar 3072 vector becomes a 32x96 strip (R|G|B side by side);
/// anything else uses a square when possible, else one row.
inline void display_shape(const std::string& dataset, std::size_t dim, std::size_t& h, std::size_t& w,
                          bool& planar_rgb) {
    planar_rgb = false;
    if (dataset == "cifar10" && dim == 3072) {
        h = 32;
        w = 96;
        planar_rgb = true;
        return;
    }
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(dim))));
    if (side * side == dim) {
        h = w = side;
    } else {
        h = 1;
        w = dim;
    }
}

inline Matrix rearrange_planar_rgb(const Matrix& maps) {
    // [R(1024) G(1024) B(1024)] -> row-major 32 x 96 with channels side by side
    Matrix out(maps.rows, maps.cols);
    for (std::size_t t = 0; t < maps.rows; ++t)
        for (std::size_t p = 0; p < maps.cols; ++p) {
            const std::size_t ch = p / 1024, r = (p % 1024) / 32, c = p % 32;
            out(t, r * 96 + ch * 32 + c) = maps(t, p);
        }
    return out;
}

inline int cmd_features(const FeaturesOpts& opt, const std::vector<std::string>& config_lines) {
    const Network net = load_network(opt.checkpoint);
    const Dataset train_set = load_train(opt.common);

    std::vector<std::size_t> layers = opt.layers;
    if (layers.empty())
        for (std::size_t l = 1; l <= net.depth(); ++l) layers.push_back(l);

    const fs::path out(opt.common.out_dir);
    fs::create_directories(out);
    std::size_t h = 0, w = 0;
    bool planar = false;
    display_shape(opt.common.dataset, train_set.dim(), h, w, planar);

    // raw and decorrelated input grids over the first samples
    const std::size_t n_show = std::min<std::size_t>(opt.max_units, train_set.n_samples());
    Matrix raw(n_show, train_set.dim());
    for (std::size_t s = 0; s < n_show; ++s)
        for (std::size_t i = 0; i < train_set.dim(); ++i) raw(s, i) = train_set.features(i, s);
    Matrix raw_cols(train_set.dim(), n_show);
    for (std::size_t s = 0; s < n_show; ++s)
        for (std::size_t i = 0; i < train_set.dim(); ++i) raw_cols(i, s) = raw(s, i);
    const Matrix x1 = matmul(net.layers[0].R, raw_cols);
    Matrix decorr(n_show, train_set.dim());
    for (std::size_t s = 0; s < n_show; ++s)
        for (std::size_t i = 0; i < train_set.dim(); ++i) decorr(s, i) = x1(i, s);

    const auto emit = [&](const Matrix& rows, const std::string& name, bool signed_scale) {
        const Matrix& shaped = planar ? rearrange_planar_rgb(rows) : rows;
        write_pgm((out / name).string(), tile_grid(shaped, h, w, opt.max_units, signed_scale),
                  config_lines);
        std::cout << "[features] wrote " << (out / name).string() << "\n";
    };
    emit(raw, "raw_inputs.pgm", false);
    emit(decorr, "decorrelated_inputs.pgm", true);

    const std::vector<LinearReadout> maps = feature_maps(net, train_set, layers);
    for (std::size_t i = 0; i < layers.size(); ++i)
        emit(maps[i].B, "features_layer" + std::to_string(layers[i]) + ".pgm", true);
    return 0;
}

// ---- decorr-lab ----------------------------------------------------------------

struct LabOpts {
    CommonOpts common;
    LabConfig cfg;
};

inline int cmd_decorr_lab(const LabOpts& opt, const std::vector<std::string>& config_lines) {
    const LabResult result = run_lab(opt.cfg);
    const fs::path out(opt.common.out_dir);
    fs::create_directories(out);
    std::ostringstream csv;
    result.write_csv(csv, config_lines);
    write_text_file(out / "decorr_lab.csv", csv.str());
    std::cout << "[decorr-lab] wrote " << (out / "decorr_lab.csv").string() << " ("
              << result.cells.size() << " cells)\n";
    return 0;
}

// ---- entry point -----------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"constrained parameter inference: decorrelating networks, local forward learning, "
                 "readout analysis and one-shot compression"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file with one [section] per subcommand");

    TrainOpts topt;
    topt.cfg.epochs = 20;
    CLI::App* tr = app.add_subcommand("train", "train a network and write metrics + checkpoint");
    tr->add_option("--dataset", topt.common.dataset, "mnist|cifar10")->capture_default_str();
    tr->add_option("--data-dir", topt.common.data_dir, "dataset root")->capture_default_str();
    tr->add_option("--out-dir", topt.common.out_dir, "output directory")->capture_default_str();
    tr->add_option("--subset", topt.common.subset, "cap training samples (0 = all)")
        ->capture_default_str();
    tr->add_option("--rule", topt.rule, "copi|bio-copi|bp-decorr|bp-adam")->capture_default_str();
    tr->add_option("--signal", topt.signal, "bp|fa")->capture_default_str();
    tr->add_option("--loss", topt.loss, "quadratic|cross-entropy")->capture_default_str();
    tr->add_option("--dims", topt.dims, "comma-separated layer sizes incl. input/output");
    auto* alpha_opt =
        tr->add_option("--alpha", topt.cfg.alpha, "error-signal gain (1.0 for bp-adam)")
            ->capture_default_str();
    tr->add_option("--eta-w", topt.cfg.eta_w, "forward learning rate")->capture_default_str();
    tr->add_option("--eta-r", topt.cfg.eta_r, "lateral learning rate")->capture_default_str();
    tr->add_option("--batch", topt.cfg.batch_size, "minibatch size")->capture_default_str();
    tr->add_option("--epochs", topt.cfg.epochs, "joint training epochs")->capture_default_str();
    tr->add_option("--warmup", topt.cfg.warmup_epochs, "decorrelation-only epochs")
        ->capture_default_str();
    tr->add_option("--seeds", topt.seeds, "number of seeded runs")->capture_default_str();
    tr->add_option("--seed", topt.cfg.seed, "base seed")->capture_default_str();

    EvalOpts eopt;
    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    ev->add_option("--checkpoint", eopt.checkpoint, "model file")->required();
    ev->add_option("--dataset", eopt.common.dataset, "mnist|cifar10")->capture_default_str();
    ev->add_option("--data-dir", eopt.common.data_dir, "dataset root")->capture_default_str();
    ev->add_option("--split", eopt.split, "train|test")->capture_default_str();
    ev->add_option("--loss", eopt.loss, "quadratic|cross-entropy")->capture_default_str();
    ev->add_option("--subset", eopt.common.subset, "cap train split (0 = all)")->capture_default_str();

    CompressOpts copt;
    CLI::App* co = app.add_subcommand("compress", "replace trailing layers by a fitted readout");
    co->add_option("--checkpoint", copt.checkpoint, "model file")->required();
    co->add_option("--dataset", copt.common.dataset, "mnist|cifar10")->capture_default_str();
    co->add_option("--data-dir", copt.common.data_dir, "dataset root")->capture_default_str();
    co->add_option("--out-dir", copt.common.out_dir, "output directory")->capture_default_str();
    co->add_option("--keep-layers", copt.keep_layers, "kept-layer counts (default: L down to 0)");
    co->add_option("--subset", copt.common.subset, "cap fit samples (0 = all)")->capture_default_str();

    FeaturesOpts fopt;
    CLI::App* fe = app.add_subcommand("features", "write feature-map and input grids as PGM");
    fe->add_option("--checkpoint", fopt.checkpoint, "model file")->required();
    fe->add_option("--dataset", fopt.common.dataset, "mnist|cifar10")->capture_default_str();
    fe->add_option("--data-dir", fopt.common.data_dir, "dataset root")->capture_default_str();
    fe->add_option("--out-dir", fopt.common.out_dir, "output directory")->capture_default_str();
    fe->add_option("--layers", fopt.layers, "layer indices to dump (default: all)");
    fe->add_option("--units", fopt.max_units, "max units/tiles per grid")->capture_default_str();
    fe->add_option("--subset", fopt.common.subset, "cap fit samples (0 = all)")->capture_default_str();

    LabOpts lopt;
    CLI::App* la = app.add_subcommand("decorr-lab", "single-step decorrelation-rule comparison");
    la->add_option("--out-dir", lopt.common.out_dir, "output directory")->capture_default_str();
    la->add_option("--dim", lopt.cfg.dim, "data dimensionality")->capture_default_str();
    la->add_option("--samples", lopt.cfg.n_samples, "sample count")->capture_default_str();
    la->add_option("--noise", lopt.cfg.r_init_noise, "R init noise range")->capture_default_str();
    la->add_option("--scales", lopt.cfg.scales, "scalings c to test")->capture_default_str();
    la->add_option("--eta", lopt.cfg.eta, "update step size")->capture_default_str();
    la->add_option("--seed", lopt.cfg.seed, "seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (tr->parsed()) {
            if (topt.rule == "bp-adam" && alpha_opt->count() == 0) topt.cfg.alpha = 1.0;
            return cmd_train(topt, effective_config(tr));
        }
        if (ev->parsed()) return cmd_eval(eopt);
        if (co->parsed()) return cmd_compress(copt, effective_config(co));
        if (fe->parsed()) return cmd_features(fopt, effective_config(fe));
        if (la->parsed()) return cmd_decorr_lab(lopt, effective_config(la));
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 1;
}

} // namespace copi::cli
