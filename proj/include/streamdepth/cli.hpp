#pragma once

// Command-line front end: gen-data, train, infer, eval, ablate, oracle-check
// and show-config. `run_cli` is callable in-process so tests can drive it.

#include <chrono>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "streamdepth/eval.hpp"
#include "streamdepth/io.hpp"
#include "streamdepth/oracle.hpp"
#include "streamdepth/streaming.hpp"
#include "streamdepth/training.hpp"
#include "streamdepth/worldgen.hpp"

namespace streamdepth {

enum ExitCode : int { kExitOk = 0, kExitUser = 1, kExitInternal = 2 };

/// Raised by commands for problems the user can fix (missing inputs, bad flags).
class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a self-check fails.
class VerificationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exit code for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const UserError*>(&e) || dynamic_cast<const IoError*>(&e) ||
        dynamic_cast<const FormatError*>(&e) || dynamic_cast<const DegenerateInputError*>(&e) ||
        dynamic_cast<const std::invalid_argument*>(&e))
        return kExitUser;
    return kExitInternal;
}

inline constexpr std::string_view kEvalHeader = "kind,frame_m,frame_n,abs_rel,delta1,mfc,mfc_flow,valid_pixels,scale,shift";
inline constexpr std::string_view kAblateHeader =
    "config,strategy,log_sigma_eps,sigma_eps,abs_rel,delta1,mfc,mfc_flow,sequences,reference_mfc_kitti360";
inline constexpr std::string_view kTimingHeader = "clip,first_frame,emitted_first,emitted_count,denoiser_calls";
inline constexpr std::string_view kLossHeader = "stage,step,loss";

/// Reference MFC on KITTI-360 for the three inference strategies.
inline double reference_mfc(Strategy s) {
    switch (s) {
    case Strategy::naive: return 0.505;
    case Strategy::replacement: return 0.479;
    case Strategy::context_aware: return 0.407;
    }
    return 0.0;
}

inline std::string eval_report_csv(const EvalReport& r) {
    std::string s = std::string(kEvalHeader) + "\n";
    const std::string none;
    for (const auto& f : r.frames)
        s += csv_line({"frame", std::to_string(f.frame), none, format_double(f.abs_rel), format_double(f.delta1), none,
                       none, std::to_string(f.valid_pixels), none, none});
    for (const auto& p : r.pairs)
        s += csv_line({"pair", std::to_string(p.frame_m), std::to_string(p.frame_n), none, none, format_double(p.value),
                       none, std::to_string(p.valid_pixels), none, none});
    for (const auto& p : r.flow_pairs)
        s += csv_line({"flow_pair", std::to_string(p.frame_m), std::to_string(p.frame_n), none, none, none,
                       format_double(p.value), std::to_string(p.valid_pixels), none, none});
    s += csv_line({"summary", none, none, format_double(r.abs_rel), format_double(r.delta1), format_double(r.mfc),
                   r.mfc_flow ? format_double(*r.mfc_flow) : none, std::to_string(r.valid_pixels),
                   format_double(r.scale), format_double(r.shift)});
    return s;
}

inline std::string eval_summary_text(const EvalReport& r) {
    std::ostringstream o;
    o << "AbsRel " << format_double(r.abs_rel) << "\n"
      << "delta1 " << format_double(r.delta1) << "\n"
      << "MFC " << format_double(r.mfc) << "\n";
    if (r.mfc_flow) o << "MFC* " << format_double(*r.mfc_flow) << "\n";
    o << "scale " << format_double(r.scale) << " shift " << format_double(r.shift) << "\n"
      << "valid_pixels " << r.valid_pixels << "\n";
    if (r.constant_prediction) o << "warning: constant prediction, fitted scale fixed to 1\n";
    if (r.delta1_excluded) o << "warning: " << r.delta1_excluded << " pixels with non-positive aligned depth excluded\n";
    return o.str();
}

/// Per-sequence evaluation of one streaming configuration, averaged over the set.
struct AblationRow {
    std::string config;
    Strategy strategy;
    double sigma_eps;
    double abs_rel = 0.0, delta1 = 0.0, mfc = 0.0, mfc_flow = 0.0;
    std::size_t sequences = 0;
};

inline AblationRow run_ablation_config(const DenoiserModel& model, const std::vector<StoredSequence>& test,
                                       StreamConfig sc, std::string name, std::size_t threads) {
    std::vector<EvalReport> reports(test.size());
    const NetworkDenoiser denoiser{model};
    const std::uint64_t base = sc.seed;
    parallel_for(test.size(), threads, [&](std::size_t i) {
        StreamConfig local = sc;
        local.seed = derive_seed(base, i);
        const auto& s = test[i];
        const Clip pred = sliding_window(denoiser, s.cond, local);
        reports[i] = evaluate(pred, s.depth, s.cameras, s.flows ? &*s.flows : nullptr);
    });
    AblationRow row{std::move(name), sc.strategy, sc.sigma_eps};
    for (const auto& r : reports) {
        row.abs_rel += r.abs_rel;
        row.delta1 += r.delta1;
        row.mfc += r.mfc;
        row.mfc_flow += r.mfc_flow.value_or(0.0);
    }
    const double n = static_cast<double>(reports.size());
    row.abs_rel /= n;
    row.delta1 /= n;
    row.mfc /= n;
    row.mfc_flow /= n;
    row.sequences = reports.size();
    return row;
}

inline std::string ablation_csv_line(const AblationRow& r, bool with_reference) {
    return csv_line({r.config, std::string(to_string(r.strategy)), format_double(std::log(r.sigma_eps)),
                     format_double(r.sigma_eps), format_double(r.abs_rel), format_double(r.delta1),
                     format_double(r.mfc), format_double(r.mfc_flow), std::to_string(r.sequences),
                     with_reference ? format_double(reference_mfc(r.strategy)) : std::string()});
}

inline std::vector<TrainingSequence> training_sequences(const std::vector<StoredSequence>& data) {
    std::vector<TrainingSequence> out;
    for (const auto& s : data) out.push_back({s.normalized_depth(), s.cond});
    return out;
}

inline std::string loss_csv(const LossCurve& curve) {
    std::string s = std::string(kLossHeader) + "\n";
    for (const auto& p : curve) s += csv_line({p.stage, std::to_string(p.step), format_double(p.loss)});
    return s;
}

namespace detail {

struct CliState {
    std::string config_path;
    std::vector<std::string> overrides;
    std::size_t threads = 1;
};

inline RunConfig resolve_config(const CliState& st) {
    RunConfig cfg = st.config_path.empty() ? RunConfig{} : load_config(st.config_path);
    for (const auto& kv : st.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UserError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
    }
    apply_seed_override(cfg);
    RunConfig r = cfg.resolved();
    r.train.threads = st.threads;
    r.oracle.threads = st.threads;
    r.validate();
    return r;
}

} // namespace detail

/// Runs one command line. Output goes to `out` (results) and `err` (logs).
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"streamdepth: video depth by conditional diffusion with per-frame noise levels"};
    app.require_subcommand(1);
    detail::CliState st;
    app.add_option("--config", st.config_path, "key=value config file (defaults apply to absent keys)");
    app.add_option("--set", st.overrides, "override one config key, key=value (repeatable)");
    app.add_option("--threads", st.threads, "worker threads (default 1)")->check(CLI::PositiveNumber);

    std::function<void()> action;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset");
    std::string gen_out;
    std::string gen_split = "train";
    gen->add_option("--out", gen_out, "output directory (default <paths.data>/<split>)");
    gen->add_option("--split", gen_split, "train or test (held-out set)")->check(CLI::IsMember({"train", "test"}));
    gen->callback([&] {
        action = [&] {
            const RunConfig cfg = detail::resolve_config(st);
            WorldConfig wc = cfg.world;
            if (gen_split == "test") {
                wc.sequences = cfg.test_sequences;
                wc.frames = cfg.test_frames;
                wc.seed = derive_seed(cfg.seed, 1000);
            }
            const fs::path dir = gen_out.empty() ? fs::path(cfg.data_dir) / gen_split : fs::path(gen_out);
            const auto seqs = generate_dataset(wc, st.threads);
            write_dataset(dir, seqs);
            write_file(dir / "config.txt", serialize_config(cfg));
            out << "wrote " << seqs.size() << " sequences of " << wc.frames << " frames (" << wc.height << "x"
                << wc.width << ") to " << dir.string() << "\n";
        };
    });

    // train
    auto* train = app.add_subcommand("train", "two-stage training");
    std::string train_data, train_run, stage = "both";
    bool joint = false;
    train->add_option("--data", train_data, "training split directory (default <paths.data>/train)");
    train->add_option("--run", train_run, "run directory for checkpoints (default <paths.run>)");
    train->add_option("--stage", stage, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
    train->add_flag("--joint", joint, "stage 2 also updates the spatial layers");
    train->callback([&] {
        action = [&] {
            const RunConfig cfg = detail::resolve_config(st);
            const fs::path data = train_data.empty() ? fs::path(cfg.data_dir) / "train" : fs::path(train_data);
            const fs::path run = train_run.empty() ? fs::path(cfg.run_dir) : fs::path(train_run);
            if (!fs::exists(data / "manifest.csv")) throw UserError("no dataset at '" + data.string() + "'");
            const auto seqs = training_sequences(read_dataset(data));
            NetConfig nc = cfg.model;
            nc.cond_channels = seqs.front().cond.channels();
            DenoiserModel model(nc);
            if (stage == "1" || stage == "both") {
                LossCurve curve;
                err << "stage 1: " << cfg.train.spatial_steps << " steps\n";
                model = train_spatial(std::move(model), single_frames(seqs), cfg.train, &curve);
                save_checkpoint(run / "stage1.ckpt", model, {1, false});
                write_file(run / "loss_stage1.csv", loss_csv(curve));
                out << "wrote " << (run / "stage1.ckpt").string() << "\n";
            }
            if (stage == "2" || stage == "both") {
                if (stage == "2") {
                    const fs::path s1 = run / "stage1.ckpt";
                    if (!fs::exists(s1)) throw UserError("stage 2 needs a stage-1 checkpoint at '" + s1.string() + "'");
                    Checkpoint ck = load_checkpoint(s1);
                    if (ck.meta.stage != 1) throw UserError("'" + s1.string() + "' is not a stage-1 checkpoint");
                    model = std::move(ck.model);
                }
                LossCurve curve;
                err << "stage 2" << (joint ? " (joint)" : "") << ": " << cfg.train.temporal_steps << " steps\n";
                model = train_temporal(std::move(model), seqs, cfg.train, &curve, joint);
                save_checkpoint(run / "stage2.ckpt", model, {2, joint});
                write_file(run / "loss_stage2.csv", loss_csv(curve));
                out << "wrote " << (run / "stage2.ckpt").string() << "\n";
            }
        };
    });

    // infer
    auto* infer = app.add_subcommand("infer", "sliding-window depth inference on a condition video");
    std::string ckpt, input, pred_out, timing_out, strategy_name;
    std::optional<double> sigma_eps;
    bool wall_clock = false;
    infer->add_option("--checkpoint", ckpt, "model checkpoint (default <paths.run>/stage2.ckpt)");
    infer->add_option("--input", input, "condition TensorFile, F x C x H x W")->required();
    infer->add_option("--out", pred_out, "output depth TensorFile")->required();
    infer->add_option("--timing", timing_out, "per-clip CSV (default <out>.timing.csv)");
    infer->add_option("--strategy", strategy_name, "naive, replacement or context (default stream.strategy)")
        ->check(CLI::IsMember({"naive", "replacement", "context"}));
    infer->add_option("--sigma-eps", sigma_eps, "noise level declared for context frames");
    infer->add_flag("--wall-clock", wall_clock, "add elapsed milliseconds to the timing CSV");
    infer->callback([&] {
        action = [&] {
            RunConfig cfg = detail::resolve_config(st);
            if (!strategy_name.empty()) cfg.stream.strategy = parse_strategy(strategy_name);
            if (sigma_eps) cfg.stream.sigma_eps = *sigma_eps;
            cfg.stream.validate();
            const fs::path ck = ckpt.empty() ? fs::path(cfg.run_dir) / "stage2.ckpt" : fs::path(ckpt);
            if (!fs::exists(ck)) throw UserError("checkpoint '" + ck.string() + "' not found");
            const Checkpoint model = load_checkpoint(ck);
            const Clip cond = read_clip(input);
            if (cond.channels() != model.model.config().cond_channels)
                throw UserError("'" + input + "' has " + std::to_string(cond.channels()) +
                                " channels but the checkpoint expects " +
                                std::to_string(model.model.config().cond_channels));
            std::string timing = std::string(kTimingHeader) + (wall_clock ? ",elapsed_ms" : "") + "\n";
            auto last = std::chrono::steady_clock::now();
            StreamHooks hooks;
            hooks.on_clip = [&](const ClipRecord& r) {
                std::vector<std::string> row{std::to_string(r.index), std::to_string(r.first_frame),
                                             std::to_string(r.emitted_first), std::to_string(r.emitted_count),
                                             std::to_string(r.denoiser_calls)};
                if (wall_clock) {
                    const auto now = std::chrono::steady_clock::now();
                    row.push_back(format_double(std::chrono::duration<double, std::milli>(now - last).count()));
                    last = now;
                }
                timing += csv_line(row);
            };
            const Clip depth = sliding_window(NetworkDenoiser{model.model}, cond, cfg.stream, hooks);
            write_clip(pred_out, depth);
            write_file(timing_out.empty() ? pred_out + ".timing.csv" : timing_out, timing);
            out << "wrote " << depth.frames() << " depth frames to " << pred_out << "\n";
        };
    });

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a depth prediction against ground truth");
    std::string ev_pred, ev_gt, ev_cams, ev_flows, ev_out;
    ev->add_option("--pred", ev_pred, "predicted depth TensorFile")->required();
    ev->add_option("--gt", ev_gt, "ground-truth depth TensorFile")->required();
    ev->add_option("--cameras", ev_cams, "camera TensorFile (F x 21)")->required();
    ev->add_option("--flows", ev_flows, "optional flow TensorFile ((F-1) x 3 x H x W)");
    ev->add_option("--out", ev_out, "report CSV path")->required();
    ev->callback([&] {
        action = [&] {
            detail::resolve_config(st);
            const Clip pred = read_clip(ev_pred);
            const Clip gt = read_clip(ev_gt);
            const auto cams = tensor_cameras(read_tensor(ev_cams), ev_cams);
            auto dims = [](const Clip& c) {
                return std::to_string(c.frames()) + "x" + std::to_string(c.channels()) + "x" +
                       std::to_string(c.height()) + "x" + std::to_string(c.width());
            };
            if (!pred.same_shape(gt))
                throw UserError("shape mismatch: '" + ev_pred + "' is " + dims(pred) + " but '" + ev_gt + "' is " +
                                dims(gt));
            if (cams.size() != gt.frames())
                throw UserError("'" + ev_cams + "' holds " + std::to_string(cams.size()) + " cameras but '" + ev_gt +
                                "' has " + std::to_string(gt.frames()) + " frames");
            std::optional<Clip> flows;
            if (!ev_flows.empty()) {
                flows = read_clip(ev_flows);
                if (flows->frames() + 1 != gt.frames() || flows->channels() != 3 || !flows->same_spatial(gt))
                    throw UserError("'" + ev_flows + "' is " + dims(*flows) + ", expected " +
                                    std::to_string(gt.frames() - 1) + "x3x" + std::to_string(gt.height()) + "x" +
                                    std::to_string(gt.width()));
            }
            const EvalReport rep = evaluate(pred, gt, cams, flows ? &*flows : nullptr, nullptr, st.threads);
            write_file(ev_out, eval_report_csv(rep));
            out << eval_summary_text(rep);
        };
    });

    // ablate
    auto* ab = app.add_subcommand("ablate", "compare inference strategies or sweep sigma_eps on held-out data");
    std::string ab_ckpt, ab_data, ab_out, ab_strategies, ab_sweep;
    ab->add_option("--checkpoint", ab_ckpt, "model checkpoint (default <paths.run>/stage2.ckpt)");
    ab->add_option("--data", ab_data, "held-out split directory (default <paths.data>/test)");
    ab->add_option("--out", ab_out, "comparison CSV path")->required();
    auto* strat_opt = ab->add_option("--strategies", ab_strategies, "'all' for naive, replacement and context");
    auto* sweep_opt = ab->add_option("--sweep", ab_sweep, "'sigma_eps' for log sigma_eps in {-8,-6,-4,-2,0}");
    strat_opt->check(CLI::IsMember({"all"}));
    sweep_opt->check(CLI::IsMember({"sigma_eps"}));
    strat_opt->excludes(sweep_opt);
    ab->callback([&] {
        action = [&] {
            if (ab_strategies.empty() && ab_sweep.empty()) throw UserError("ablate needs --strategies all or --sweep sigma_eps");
            const RunConfig cfg = detail::resolve_config(st);
            const fs::path ck = ab_ckpt.empty() ? fs::path(cfg.run_dir) / "stage2.ckpt" : fs::path(ab_ckpt);
            const fs::path data = ab_data.empty() ? fs::path(cfg.data_dir) / "test" : fs::path(ab_data);
            if (!fs::exists(ck)) throw UserError("checkpoint '" + ck.string() + "' not found");
            if (!fs::exists(data / "manifest.csv")) throw UserError("no dataset at '" + data.string() + "'");
            const Checkpoint model = load_checkpoint(ck);
            const auto test = read_dataset(data);
            std::string csv = std::string(kAblateHeader) + "\n";
            if (!ab_strategies.empty()) {
                for (Strategy s : {Strategy::naive, Strategy::replacement, Strategy::context_aware}) {
                    StreamConfig sc = cfg.stream;
                    sc.strategy = s;
                    const auto row = run_ablation_config(model.model, test, sc, std::string(to_string(s)), st.threads);
                    err << to_string(s) << ": MFC " << format_double(row.mfc) << "\n";
                    csv += ablation_csv_line(row, true);
                }
            } else {
                for (int g : {-8, -6, -4, -2, 0}) {
                    StreamConfig sc = cfg.stream;
                    sc.strategy = Strategy::context_aware;
                    sc.sigma_eps = std::exp(static_cast<double>(g));
                    const auto row =
                        run_ablation_config(model.model, test, sc, "log_sigma_eps=" + std::to_string(g), st.threads);
                    err << "log sigma_eps " << g << ": MFC " << format_double(row.mfc) << "\n";
                    csv += ablation_csv_line(row, false);
                }
            }
            write_file(ab_out, csv);
            out << csv;
        };
    });

    // oracle-check
    auto* oc = app.add_subcommand("oracle-check", "verify the samplers in the exact Gaussian world");
    std::string oc_out;
    oc->add_option("--out", oc_out, "optional report CSV");
    oc->callback([&] {
        action = [&] {
            const RunConfig cfg = detail::resolve_config(st);
            const GaussianVideoPrior prior = make_oracle_prior(cfg.oracle);
            const ContextReport rep = context_check(prior, cfg.oracle);
            std::string csv = "strategy,bias,bias_lo,bias_hi,seam,within,seam_ratio\n";
            for (const auto& b : rep.bias) {
                const auto& s = rep.seam_of(b.strategy);
                csv += csv_line({std::string(to_string(b.strategy)), format_double(b.bias.value),
                                 format_double(b.bias.lo), format_double(b.bias.hi), format_double(s.seam),
                                 format_double(s.within), format_double(s.ratio())});
            }
            out << csv;
            if (!oc_out.empty()) write_file(oc_out, csv);
            const auto& ours = rep.bias_of(Strategy::context_aware).bias;
            const auto& repl = rep.bias_of(Strategy::replacement).bias;
            if (!ours.below(repl))
                throw VerificationFailure("context-aware bias is not below replacement bias with disjoint 95% intervals");
            out << "ordering eps_ours < eps_repl holds\n";
        };
    });

    // show-config
    auto* show = app.add_subcommand("show-config", "print the resolved configuration");
    show->callback([&] { action = [&] { out << serialize_config(detail::resolve_config(st)); }; });

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUser;
    }
    try {
        if (action) action();
        return kExitOk;
    } catch (const VerificationFailure& e) {
        err << "verification failed: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run_cli(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

} // namespace streamdepth
