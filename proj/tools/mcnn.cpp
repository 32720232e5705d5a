// Command-line front end: train / eval / ablate / gradcheck / synth / predict.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <mcnn/mcnn.hpp>

namespace fs = std::filesystem;
using namespace mcnn;

namespace {

std::string resolve_out_dir(const std::string& flag_out, const std::string& cfg_out) {
    if (!flag_out.empty()) return flag_out;
    if (!cfg_out.empty()) return cfg_out;
    const char* env = std::getenv("MCNN_OUT_DIR");
    if (env && *env) return env;
    return "out";
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) {
        RunConfig rc;
        rc.validate();
        return rc;
    }
    return parse_run_config_text(io::read_file_text(path));
}

template <typename F>
int with_precision(const std::string& prec, F&& f) {
    if (prec == "f32") return f(float{});
    if (prec == "f64") return f(double{});
    throw ConfigError("config: precision must be f32 or f64, got '" + prec + "'");
}

// Shared sample/split/stats assembly: synthetic generator or disk images,
// split shuffled from the run seed, label scaling fit on the training split.
template <typename T>
struct PreparedData {
    std::vector<Sample<T>> samples;
    SplitIndices split;
    NormStats stats;
};

template <typename T>
PreparedData<T> prepare_data(const RunConfig& rc) {
    PreparedData<T> out;
    if (rc.data.synthetic_n > 0) {
        SynthData<T> sd = synth_dataset<T>(rc.data.synthetic_n, rc.data.synthetic_size,
                                           rc.train.seed);
        out.samples = std::move(sd.samples);
    } else {
        if (rc.data.image_dir.empty() || rc.data.labels_csv.empty())
            throw ConfigError(
                "train: exactly one data source required (--synthetic N, or --data DIR with "
                "--labels CSV)");
        out.samples = load_samples<T>(rc.data.image_dir, rc.data.labels_csv);
    }
    Rng split_rng = Rng(rc.train.seed).derive(kTagSplit);
    out.split = split_indices(out.samples.size(), rc.data.val_fraction, split_rng);
    out.stats = compute_norm_stats(out.samples, out.split.train);
    apply_score_norm(out.samples, out.stats);
    return out;
}

// ---- train ------------------------------------------------------------------

template <typename T>
int run_train(const RunConfig& rc, const std::string& out_dir) {
    PreparedData<T> pd = prepare_data<T>(rc);
    Trainer<T> trainer(rc.model, rc.train, rc.augment, std::move(pd.samples), pd.split,
                       pd.stats);
    std::printf("train: %zu train / %zu val samples, %zu parameters, precision %s\n",
                pd.split.train.size(), pd.split.val.size(),
                trainer.model().count_parameters(), precision_name<T>());
    std::fflush(stdout);
    while (!trainer.done()) {
        trainer.step_epoch();
        const EpochStats& e = trainer.history().back();
        std::printf("epoch %zu/%zu  train=%.6g  val=%.6g  lr=%.6g\n", e.epoch, rc.train.epochs,
                    e.train_loss, e.val_loss, e.lr);
        std::fflush(stdout);
    }
    trainer.restore_best();

    fs::create_directories(out_dir);
    trainer.save((fs::path(out_dir) / "checkpoint.mckp").string());
    io::write_file_text((fs::path(out_dir) / "history.csv").string(),
                        history_csv(trainer.history()));
    EvalReport rep = evaluate(trainer.model(), trainer.samples(), trainer.split().val,
                              trainer.stats(), rc.train.batch_size);
    const std::string kv = format_report_kv(rep);
    io::write_file_text((fs::path(out_dir) / "eval.txt").string(), kv);

    std::printf("best epoch %zu, best val loss %.6g\n", trainer.stopper().best_epoch(),
                trainer.stopper().best());
    std::fputs(format_report_table(rep).c_str(), stdout);
    std::fputs(kv.c_str(), stdout);
    std::printf("wrote checkpoint.mckp, history.csv, eval.txt to %s\n", out_dir.c_str());
    return 0;
}

// ---- eval -------------------------------------------------------------------

template <typename T>
int run_eval(const std::string& ck_path, const std::string& image_dir,
             const std::string& labels_csv) {
    CheckpointData<T> ck = load_checkpoint<T>(ck_path);
    Model<T> model(ck.model_cfg);
    load_model_state(model, ck);
    std::vector<Sample<T>> samples = load_samples<T>(image_dir, labels_csv);
    EvalReport rep = evaluate(model, samples, ck.stats, ck.train_cfg.batch_size);
    std::fputs(format_report_table(rep).c_str(), stdout);
    std::fputs(format_report_kv(rep).c_str(), stdout);
    return 0;
}

// ---- ablate -----------------------------------------------------------------

std::vector<char> parse_variants(const std::string& spec) {
    std::vector<char> out;
    for (std::size_t i = 0; i < spec.size();) {
        std::size_t j = spec.find(',', i);
        if (j == std::string::npos) j = spec.size();
        std::string tok = spec.substr(i, j - i);
        if (tok.size() != 1 || tok[0] < 'A' || tok[0] > 'D')
            throw ConfigError("ablate: unknown variant '" + tok + "', expected A, B, C or D");
        out.push_back(tok[0]);
        i = j + 1;
    }
    if (out.empty()) throw ConfigError("ablate: no variants given");
    return out;
}

template <typename T>
int run_ablate(const RunConfig& rc, const std::vector<char>& variants,
               const std::string& out_dir) {
    PreparedData<T> pd = prepare_data<T>(rc);

    struct Row {
        char v;
        bool gate, pyramid;
        EvalReport rep;
    };
    std::vector<Row> rows;
    for (char v : variants) {
        ModelConfig mc = make_variant(rc.model, v);
        Trainer<T> trainer(mc, rc.train, rc.augment, pd.samples, pd.split, pd.stats);
        std::printf("variant %c: training (%zu parameters)\n", v,
                    trainer.model().count_parameters());
        std::fflush(stdout);
        trainer.run();
        EvalReport rep = evaluate(trainer.model(), trainer.samples(), trainer.split().val,
                                  trainer.stats(), rc.train.batch_size);
        rows.push_back({v, mc.use_gate, mc.use_pyramid, rep});
    }

    // manual layout: the check marks are multi-byte, so printf field widths lie
    std::string table = "variant  gate  pyramid  pc        rmse\n";
    std::string kv;
    char buf[200];
    for (const Row& r : rows) {
        const std::string pc = r.rep.pc ? format_double(*r.rep.pc) : "undefined";
        std::snprintf(buf, sizeof(buf), "%.4f", r.rep.rmse);
        std::string pc_col = pc.size() > 8 ? pc.substr(0, 8) : pc;
        pc_col.resize(8, ' ');
        std::string line(1, r.v);
        line += "        ";
        line += r.gate ? "✓" : "✗";
        line += "     ";
        line += r.pyramid ? "✓" : "✗";
        line += "        ";
        line += pc_col;
        line += "  ";
        line += buf;
        line += "\n";
        table += line;

        std::snprintf(buf, sizeof(buf),
                      "variant=%c gate=%d pyramid=%d n=%zu mae=%s rmse=%s pc=%s\n", r.v,
                      r.gate ? 1 : 0, r.pyramid ? 1 : 0, r.rep.n,
                      format_double(r.rep.mae).c_str(), format_double(r.rep.rmse).c_str(),
                      pc.c_str());
        kv += buf;
    }
    std::fputs(table.c_str(), stdout);
    std::fputs(kv.c_str(), stdout);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        io::write_file_text((fs::path(out_dir) / "ablation.txt").string(), table + kv);
        std::printf("wrote ablation.txt to %s\n", out_dir.c_str());
    }
    return 0;
}

// ---- gradcheck / synth / predict ---------------------------------------------

int run_gradcheck(const std::string& preset, std::uint64_t seed) {
    const GradCheckReport rep = gradcheck_preset(preset, seed);
    for (const auto& e : rep.entries)
        std::printf("group=%-36s max_rel_err=%.3e checked=%zu\n", e.name.c_str(),
                    e.max_rel_err, e.checked);
    const bool ok = rep.pass(1e-4);
    std::printf("worst=%.3e tol=1e-04 status=%s\n", rep.worst(), ok ? "PASS" : "FAIL");
    if (!ok)
        throw NumericError("gradient check failed: worst relative error " +
                           format_double(rep.worst()));
    return 0;
}

int run_synth(std::size_t n, std::size_t size, std::uint64_t seed, const std::string& out_dir) {
    SynthData<double> sd = synth_dataset<double>(n, size, seed);
    fs::create_directories(out_dir);
    std::string manifest = "filename,score\n";
    char buf[96];
    for (const auto& s : sd.samples) {
        io::save_tensor((fs::path(out_dir) / s.filename).string(), s.image);
        std::snprintf(buf, sizeof(buf), "%.17g", s.score_raw);
        manifest += s.filename + "," + buf + "\n";
    }
    io::write_file_text((fs::path(out_dir) / "manifest.csv").string(), manifest);
    std::printf("wrote %zu images and manifest.csv to %s\n", sd.samples.size(),
                out_dir.c_str());
    return 0;
}

template <typename T>
int run_predict(const std::string& ck_path, const std::string& image_path) {
    CheckpointData<T> ck = load_checkpoint<T>(ck_path);
    Model<T> model(ck.model_cfg);
    load_model_state(model, ck);
    Sample<T> s;
    s.filename = image_path;
    s.image = load_image_file<T>(image_path);
    const std::vector<Sample<T>> samples{std::move(s)};
    const std::vector<std::size_t> idx{0};
    const std::vector<double> pred = predict_raw(model, samples, idx, ck.stats, 1);
    std::printf("%.12g\n", pred[0]);
    return 0;
}

int dispatch_by_checkpoint(const std::string& ck_path, auto&& f32, auto&& f64) {
    const nlohmann::json meta = load_checkpoint_meta(ck_path);
    std::string prec;
    try {
        prec = meta.at("precision").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw DataError("checkpoint: missing precision field");
    }
    if (prec == "f32") return f32();
    if (prec == "f64") return f64();
    throw DataError("checkpoint: unknown precision '" + prec + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gated CNN facial beauty score regression toolkit"};
    app.require_subcommand(1);

    // train
    auto* t = app.add_subcommand("train", "train a model and write checkpoint + history");
    std::string t_config, t_data, t_labels, t_out;
    std::size_t t_synth = 0;
    std::uint64_t t_seed = 0;
    t->add_option("--config", t_config, "run config JSON");
    t->add_option("--data", t_data, "image directory");
    t->add_option("--labels", t_labels, "labels CSV (filename,score)");
    auto* t_synth_opt = t->add_option("--synthetic", t_synth, "generate N synthetic samples");
    t->add_option("--out", t_out, "output directory");
    auto* t_seed_opt = t->add_option("--seed", t_seed, "run seed (overrides config)");

    // eval
    auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
    std::string e_ck, e_data, e_labels, e_manifest;
    e->add_option("--checkpoint", e_ck, "checkpoint file")->required();
    e->add_option("--data", e_data, "image directory");
    e->add_option("--labels", e_labels, "labels CSV");
    e->add_option("--synthetic-manifest", e_manifest, "manifest.csv written by synth");

    // ablate
    auto* a = app.add_subcommand("ablate", "train gate/pyramid variants and compare");
    std::string a_config, a_variants = "A,B,C,D", a_out;
    std::size_t a_synth = 0;
    std::uint64_t a_seed = 0;
    a->add_option("--config", a_config, "run config JSON");
    a->add_option("--variants", a_variants, "comma list from A,B,C,D");
    auto* a_synth_opt = a->add_option("--synthetic", a_synth, "generate N synthetic samples");
    auto* a_seed_opt = a->add_option("--seed", a_seed, "run seed (overrides config)");
    a->add_option("--out", a_out, "output directory for ablation.txt");

    // gradcheck
    auto* g = app.add_subcommand("gradcheck", "finite-difference gradient check");
    std::string g_preset;
    std::uint64_t g_seed = 42;
    g->add_option("--preset", g_preset, "tiny | block | layers")->required();
    g->add_option("--seed", g_seed, "check seed");

    // synth
    auto* s = app.add_subcommand("synth", "write a synthetic dataset + manifest");
    std::size_t s_n = 0, s_size = 48;
    std::uint64_t s_seed = 42;
    std::string s_out;
    s->add_option("--n", s_n, "sample count")->required();
    s->add_option("--size", s_size, "image side length (>= 16)");
    s->add_option("--seed", s_seed, "generator seed");
    s->add_option("--out", s_out, "output directory");

    // predict
    auto* p = app.add_subcommand("predict", "score one image with a checkpoint");
    std::string p_ck, p_image;
    p->add_option("--checkpoint", p_ck, "checkpoint file")->required();
    p->add_option("--image", p_image, "image file (.ppm or .mtns)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (t->parsed()) {
            RunConfig rc = load_run_config(t_config);
            if (t_seed_opt->count()) rc.train.seed = t_seed;
            if (t_synth_opt->count()) {
                if (!t_data.empty() || !t_labels.empty())
                    throw ConfigError("train: --synthetic excludes --data/--labels");
                check_arg(t_synth >= 1, "train: --synthetic needs N >= 1");
                rc.data.synthetic_n = t_synth;
            } else if (!t_data.empty() || !t_labels.empty()) {
                if (t_data.empty() || t_labels.empty())
                    throw ConfigError("train: --data and --labels go together");
                rc.data.image_dir = t_data;
                rc.data.labels_csv = t_labels;
                rc.data.synthetic_n = 0;
            }
            rc.validate();
            const std::string out = resolve_out_dir(t_out, rc.data.out_dir);
            return with_precision(rc.train.precision, [&](auto tag) {
                return run_train<decltype(tag)>(rc, out);
            });
        }
        if (e->parsed()) {
            const bool disk = !e_data.empty() || !e_labels.empty();
            const bool synth = !e_manifest.empty();
            if (disk == synth)
                throw ConfigError(
                    "eval: exactly one source required (--data/--labels or "
                    "--synthetic-manifest)");
            std::string dir = e_data, labels = e_labels;
            if (synth) {
                dir = fs::path(e_manifest).parent_path().string();
                if (dir.empty()) dir = ".";
                labels = e_manifest;
            } else if (e_data.empty() || e_labels.empty()) {
                throw ConfigError("eval: --data and --labels go together");
            }
            return dispatch_by_checkpoint(
                e_ck, [&] { return run_eval<float>(e_ck, dir, labels); },
                [&] { return run_eval<double>(e_ck, dir, labels); });
        }
        if (a->parsed()) {
            RunConfig rc = load_run_config(a_config);
            if (a_seed_opt->count()) rc.train.seed = a_seed;
            if (a_synth_opt->count()) {
                check_arg(a_synth >= 1, "ablate: --synthetic needs N >= 1");
                rc.data.synthetic_n = a_synth;
            }
            if (rc.data.synthetic_n == 0 && rc.data.image_dir.empty())
                throw ConfigError("ablate: a data source is required (--synthetic or config)");
            rc.validate();
            const std::vector<char> variants = parse_variants(a_variants);
            return with_precision(rc.train.precision, [&](auto tag) {
                return run_ablate<decltype(tag)>(rc, variants, a_out);
            });
        }
        if (g->parsed()) return run_gradcheck(g_preset, g_seed);
        if (s->parsed()) {
            check_arg(s_n >= 1, "synth: --n must be >= 1");
            return run_synth(s_n, s_size, s_seed, resolve_out_dir(s_out, ""));
        }
        if (p->parsed())
            return dispatch_by_checkpoint(
                p_ck, [&] { return run_predict<float>(p_ck, p_image); },
                [&] { return run_predict<double>(p_ck, p_image); });
        return 1;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const DataError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const NumericError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
}
