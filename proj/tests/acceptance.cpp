// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
// Usage: acceptance [--workdir DIR] [--threads N] [--reuse-toy]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "grad_check.hpp"
#include "streamdepth/cli.hpp"
#include "streamdepth/streamdepth.hpp"

using namespace streamdepth;
namespace fs = std::filesystem;

namespace {

// Criterion 1
constexpr double kFidelityMeanTol = 0.05;
constexpr double kFidelityCovTol = 0.1;
constexpr double kFidelitySeconds = 120.0;
// Criterion 2
constexpr double kContextBiasTol = 0.05;
constexpr double kSeamRatioMin = 2.0;
constexpr double kContextSeconds = 300.0;
// Criterion 3
constexpr double kToySeconds = 45.0 * 60.0;
// Criterion 5
constexpr double kAffineRelTol = 1e-6;
constexpr double kGtMfcTol = 1e-4;
constexpr std::size_t kGtScenes = 10;
// Criterion 6
constexpr std::size_t kGradProbesPerStage = 60;
constexpr double kGradRelTol = 1e-2;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    int id;
    std::string name;
    bool pass;
    bool soft = false;
    std::string detail;
};

std::vector<Verdict> verdicts;

std::string criterion_name(int id) {
    switch (id) {
    case 1: return "oracle sampler fidelity";
    case 2: return "context-aware conditional sampling";
    case 3: return "toy strategy ordering";
    case 4: return "sigma_eps sweep interior minimum";
    case 5: return "metric correctness";
    case 6: return "gradient check";
    case 7: return "stage isolation";
    case 8: return "constant SigmaVector reduction";
    case 9: return "determinism and formats";
    }
    return "unknown";
}

void report(int id, bool pass, const std::string& detail, bool soft = false) {
    const std::string name = criterion_name(id);
    std::printf("criterion %d %s: %s%s | %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", soft ? " (soft)" : "",
                detail.c_str());
    std::fflush(stdout);
    verdicts.push_back({id, name, pass, soft, detail});
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

bool bit_equal(const Clip& a, const Clip& b) {
    return a.same_shape(b) && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

struct CliRun {
    int code;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

void require_ok(const CliRun& r, const std::string& what) {
    if (r.code != 0) throw std::runtime_error(what + " failed (exit " + std::to_string(r.code) + "): " + r.err);
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
    return files;
}

NetConfig small_net() {
    NetConfig c;
    c.width = 6;
    c.attn_dim = 4;
    c.embed_freqs = 3;
    c.dilations = {1, 2};
    c.init_seed = 9;
    return c;
}

Clip random_clip(std::size_t f, std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    Clip out(f, c, h, w);
    fill_standard_normal(out.data(), rng);
    return out;
}

// ---------------------------------------------------------------------------

void criterion1() {
    OracleConfig cfg;  // F = 10, D = 4, rho_time = 0.9, T = 64, 10^4 samples
    cfg.threads = 1;
    const auto t0 = Clock::now();
    const SamplerFidelity fid = sampler_fidelity(make_oracle_prior(cfg), cfg);
    const double secs = seconds_since(t0);
    report(1, fid.mean_error < kFidelityMeanTol && fid.cov_error < kFidelityCovTol && secs < kFidelitySeconds,
           fmt("max mean error %.4f (< %.2f), max cov error %.4f (< %.2f), %.1f s single-threaded (< %.0f)",
               fid.mean_error, kFidelityMeanTol, fid.cov_error, kFidelityCovTol, secs, kFidelitySeconds));
}

void criterion2(std::size_t threads, const fs::path& work) {
    OracleConfig cfg;
    cfg.threads = threads;
    const auto t0 = Clock::now();
    const ContextReport rep = context_check(make_oracle_prior(cfg), cfg);
    const double secs = seconds_since(t0);
    const auto& ours = rep.bias_of(Strategy::context_aware).bias;
    const auto& repl = rep.bias_of(Strategy::replacement).bias;
    const auto& naive = rep.seam_of(Strategy::naive);
    std::string csv = "strategy,bias,bias_lo,bias_hi,seam,within,seam_ratio\n";
    for (const auto& b : rep.bias) {
        const auto& s = rep.seam_of(b.strategy);
        csv += csv_line({std::string(to_string(b.strategy)), format_double(b.bias.value), format_double(b.bias.lo),
                         format_double(b.bias.hi), format_double(s.seam), format_double(s.within),
                         format_double(s.ratio())});
    }
    write_file(work / "oracle_context.csv", csv);
    const bool pass = ours.value < kContextBiasTol && ours.below(repl) && naive.ratio() >= kSeamRatioMin &&
                      secs < kContextSeconds;
    report(2, pass,
           fmt("bias context %.4f [%.4f, %.4f] (< %.2f), replacement %.4f [%.4f, %.4f], naive seam/within %.2f "
               "(>= %.1f), %.1f s on %zu threads (< %.0f)",
               ours.value, ours.lo, ours.hi, kContextBiasTol, repl.value, repl.lo, repl.hi, naive.ratio(),
               kSeamRatioMin, secs, threads, kContextSeconds));
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

// Criteria 3 and 4 share the toy run: default config, 20 training and 10 held-out sequences.
void criteria3and4(std::size_t threads, const fs::path& work, bool reuse) {
    const fs::path toy = work / "toy";
    const std::string th = std::to_string(threads);
    const std::vector<std::string> base{"--threads", th, "--set", "paths.data=" + (toy / "data").string(), "--set",
                                        "paths.run=" + (toy / "run").string()};
    auto with = [&](std::vector<std::string> extra) {
        std::vector<std::string> a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    const auto t0 = Clock::now();
    const bool have = reuse && fs::exists(toy / "run" / "stage2.ckpt") && fs::exists(toy / "data" / "test" / "manifest.csv");
    if (!have) {
        require_ok(cli(with({"gen-data"})), "gen-data");
        require_ok(cli(with({"gen-data", "--split", "test"})), "gen-data --split test");
        require_ok(cli(with({"train"})), "train");
    }
    require_ok(cli(with({"ablate", "--strategies", "all", "--out", (toy / "ablation.csv").string()})), "ablate");
    const double secs = seconds_since(t0);
    const auto rows = csv_rows(read_file(toy / "ablation.csv"));
    std::map<std::string, std::vector<std::string>> by;
    for (const auto& r : rows) by[r[1]] = r;
    const double naive = std::stod(by.at("naive")[6]);
    const double repl = std::stod(by.at("replacement")[6]);
    const double ours = std::stod(by.at("context")[6]);
    auto absrel = [&](const char* s) { return std::stod(by.at(s)[4]); };
    report(3, ours < repl && repl <= naive && (have || secs < kToySeconds),
           fmt("MFC context %.4f < replacement %.4f <= naive %.4f (AbsRel %.3f / %.3f / %.3f), %s%.1f min on %zu "
               "threads (< 45)",
               ours, repl, naive, absrel("context"), absrel("replacement"), absrel("naive"),
               have ? "reused checkpoint, ablation " : "", secs / 60.0, threads));

    // Stage isolation on the real toy checkpoints feeds criterion 7.
    const Checkpoint s1 = load_checkpoint(toy / "run" / "stage1.ckpt");
    const Checkpoint s2 = load_checkpoint(toy / "run" / "stage2.ckpt");
    if (!s2.model.params().group_equal(s1.model.params(), ParamGroup::spatial))
        throw std::runtime_error("toy stage-2 checkpoint changed spatial parameters");

    require_ok(cli(with({"ablate", "--sweep", "sigma_eps", "--out", (toy / "sweep_sigma_eps.csv").string()})),
               "ablate --sweep");
    const auto sweep = csv_rows(read_file(toy / "sweep_sigma_eps.csv"));
    std::size_t best = 0;
    std::string curve;
    for (std::size_t i = 0; i < sweep.size(); ++i) {
        if (std::stod(sweep[i][6]) < std::stod(sweep[best][6])) best = i;
        curve += fmt("%s%s:%.4f", i ? " " : "", sweep[i][2].c_str(), std::stod(sweep[i][6]));
    }
    report(4, best > 0 && best + 1 < sweep.size(),
           "log sigma_eps:MFC " + curve + ", minimum at " + sweep[best][2] + ", curve in " +
               (toy / "sweep_sigma_eps.csv").string(),
           true);
}

void criterion5() {
    std::vector<std::string> fails;
    // Hand fixture: gt [1, 2, 3], pred [1, 1, 2] -> s = 1.5, b = 0, aligned [1.5, 1.5, 3], AbsRel 0.25.
    {
        Clip gt(1, 1, 1, 3), pred(1, 1, 1, 3);
        gt.data() = {1, 2, 3};
        pred.data() = {1, 1, 2};
        const Mask m = detail::full_mask(gt);
        const AlignFit fit = fit_scale_shift_global(pred, gt, m);
        const double ar = abs_rel(apply_alignment(pred, fit), gt, m);
        if (std::abs(fit.scale - 1.5) > 1e-12 || std::abs(fit.shift) > 1e-12 || std::abs(ar - 0.25) > 1e-12)
            fails.push_back(fmt("hand fixture s=%.15g b=%.3g AbsRel=%.15g", fit.scale, fit.shift, ar));
    }
    // delta1 fixture: ratios 1, 1.2, 1.3 against the 1.25 threshold.
    {
        Clip gt(1, 1, 1, 3), pred(1, 1, 1, 3);
        gt.data() = {1, 1, 1};
        pred.data() = {1, 1.2, 1.3};
        const double d1 = delta1(pred, gt, detail::full_mask(gt)).value;
        if (std::abs(d1 - 2.0 / 3.0) > 1e-15) fails.push_back(fmt("delta1 fixture %.15g", d1));
    }

    WorldConfig wc;
    wc.frames = 10;
    wc.sequences = kGtScenes;
    wc.seed = 7;
    const auto scenes = generate_dataset(wc);

    // Affine invariance on a perturbed prediction of the first scene.
    double worst_rel = 0.0;
    {
        const auto& s = scenes.front();
        Rng rng(11);
        Clip pred = s.depth;
        std::normal_distribution<double> n(0.0, 0.05);
        for (double& v : pred.data()) v = v * (1.0 + n(rng)) + 0.3;
        const EvalReport ref = evaluate(pred, s.depth, s.cameras, &s.flows);
        auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); };
        for (double a : {0.1, 1.0, 10.0})
            for (double b : {-5.0, 0.0, 5.0}) {
                Clip p = pred;
                for (double& v : p.data()) v = a * v + b;
                const EvalReport r = evaluate(p, s.depth, s.cameras, &s.flows);
                worst_rel = std::max({worst_rel, rel(r.abs_rel, ref.abs_rel), rel(r.delta1, ref.delta1),
                                      rel(r.mfc, ref.mfc), rel(*r.mfc_flow, *ref.mfc_flow)});
            }
        if (worst_rel >= kAffineRelTol) fails.push_back(fmt("affine invariance rel error %.3g", worst_rel));
    }

    // Ground truth against itself with exact poses.
    double worst_gt = 0.0;
    std::size_t above = 0;
    for (const auto& s : scenes) {
        const double m = evaluate(s.depth, s.depth, s.cameras).mfc;
        worst_gt = std::max(worst_gt, m);
        if (m >= kGtMfcTol) ++above;
    }
    if (above) fails.push_back(fmt("%zu of %zu scenes with GT MFC >= %.0e", above, kGtScenes, kGtMfcTol));

    std::string detail = fmt("hand fixtures checked, affine worst rel %.2e (< %.0e), GT MFC worst %.2e over %zu scenes "
                             "(< %.0e)",
                             worst_rel, kAffineRelTol, worst_gt, kGtScenes, kGtMfcTol);
    for (const auto& f : fails) detail += "; " + f;
    report(5, fails.empty(), detail);
}

void criterion6() {
    Rng rng(21);
    DenoiserModel model(small_net());
    streamdepth::testing::randomize_temporal(model, 0.3, rng);
    std::size_t good = 0, total = 0;
    double worst = 0.0;
    auto tally = [&](const std::vector<streamdepth::testing::ProbeResult>& probes) {
        for (const auto& p : probes) {
            ++total;
            worst = std::max(worst, p.rel_error);
            if (p.rel_error < kGradRelTol) ++good;
        }
    };
    // Stage 1: single frames, spatial parameters.
    const TrainingExample single{random_clip(1, 1, 5, 5, rng), random_clip(1, 1, 5, 5, rng)};
    tally(streamdepth::testing::finite_difference_probe(model, single, SigmaVector({0.8}), random_clip(1, 1, 5, 5, rng),
                                                        {true, false}, kGradProbesPerStage, 1e-3, rng));
    // Stage 2: a clip with distinct per-frame levels, temporal parameters.
    const TrainingExample clip{random_clip(4, 1, 5, 5, rng), random_clip(4, 1, 5, 5, rng)};
    tally(streamdepth::testing::finite_difference_probe(model, clip, SigmaVector({0.05, 0.4, 1.5, 7.0}),
                                                        random_clip(4, 1, 5, 5, rng), {false, true},
                                                        kGradProbesPerStage, 1e-3, rng));
    report(6, good == total && total >= 100,
           fmt("%zu/%zu coordinates (spatial on 1 frame, temporal on 4 frames) within %.0e, worst %.2e", good, total,
               kGradRelTol, worst));
}

void criterion7(const fs::path& work) {
    const fs::path dir = work / "stages";
    fs::remove_all(dir);
    const std::vector<std::string> base{"--threads", "1", "--set", "paths.data=" + (dir / "data").string(), "--set",
                                        "paths.run=" + (dir / "run").string(), "--set", "world.n_sequences=4",
                                        "--set", "world.frames=12", "--set", "train.spatial_steps=30", "--set",
                                        "train.temporal_steps=30", "--set", "model.width=8"};
    auto with = [&](std::vector<std::string> extra) {
        std::vector<std::string> a = base;
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    require_ok(cli(with({"gen-data"})), "gen-data");
    require_ok(cli(with({"train", "--stage", "1"})), "train --stage 1");
    require_ok(cli(with({"train", "--stage", "2"})), "train --stage 2");
    const Checkpoint s1 = load_checkpoint(dir / "run" / "stage1.ckpt");
    const Checkpoint seq = load_checkpoint(dir / "run" / "stage2.ckpt");
    fs::rename(dir / "run" / "stage2.ckpt", dir / "run" / "stage2_sequential.ckpt");
    require_ok(cli(with({"train", "--stage", "2", "--joint"})), "train --stage 2 --joint");
    const Checkpoint joint = load_checkpoint(dir / "run" / "stage2.ckpt");
    const bool isolated = seq.model.params().group_equal(s1.model.params(), ParamGroup::spatial);
    const bool temporal_moved = !seq.model.params().group_equal(s1.model.params(), ParamGroup::temporal);
    const bool joint_differs = !joint.model.params().group_equal(seq.model.params(), ParamGroup::spatial) &&
                               joint.meta.joint && !seq.meta.joint;
    report(7, isolated && temporal_moved && joint_differs,
           fmt("sequential stage 2 spatial bit-identical to stage 1: %s, temporal updated: %s, joint checkpoint "
               "spatial differs: %s (toy checkpoints also isolated)",
               isolated ? "yes" : "no", temporal_moved ? "yes" : "no", joint_differs ? "yes" : "no"));
}

void criterion8() {
    Rng rng(31);
    DenoiserModel model(small_net());
    streamdepth::testing::randomize_temporal(model, 0.3, rng);
    const NetworkResidual net{model};
    const NetworkDenoiser den{model};
    const Clip z0 = random_clip(5, 1, 6, 6, rng);
    const Clip cond = random_clip(5, 1, 6, 6, rng);
    std::vector<std::string> fails;
    for (double sigma : {0.002, 0.3, 1.0, 17.0, 80.0}) {
        const SigmaVector sv(5, sigma);
        Rng a(99), b(99);
        const Clip per_frame = forward_diffuse(z0, sv, a);
        const Clip clip_level = forward_diffuse(z0, sigma, b);
        if (!bit_equal(per_frame, clip_level)) fails.push_back(fmt("forward_diffuse at %g", sigma));
        const Clip d1 = apply_denoiser(net, per_frame, sv, cond);
        const Clip d2 = apply_denoiser(net, per_frame, sigma, cond);
        if (!bit_equal(d1, d2)) fails.push_back(fmt("apply_denoiser at %g", sigma));
        if (!bit_equal(dsm_loss(d1, z0, sv), dsm_loss(d2, z0, sigma))) fails.push_back(fmt("dsm_loss at %g", sigma));
    }
    // infer_clip against a clip-level Euler loop with the same noise draw.
    const NoiseSchedule schedule = make_schedule(ScheduleParams{12});
    Rng a(5), b(5);
    const Clip sampled = infer_clip(den, cond, schedule, a);
    Clip z = forward_diffuse(Clip(5, 1, 6, 6), schedule.sigma_max(), b);
    for (std::size_t t = schedule.steps(); t >= 1; --t)
        z = euler_step(z, apply_denoiser(net, z, schedule[t], cond), schedule[t], schedule[t - 1]);
    if (!bit_equal(sampled, z)) fails.push_back("infer_clip");
    std::string detail = "forward_diffuse, apply_denoiser, dsm_loss at sigma in {0.002, 0.3, 1, 17, 80}; infer_clip "
                         "over a 12-step schedule";
    for (const auto& f : fails) detail += "; mismatch: " + f;
    report(8, fails.empty(), detail);
}

void criterion9(const fs::path& work) {
    std::vector<std::string> fails;
    auto run_all = [&](const fs::path& dir) {
        fs::remove_all(dir);
        fs::create_directories(dir / "joint");
        const std::vector<std::string> base{
            "--threads", "1", "--set", "paths.data=" + (dir / "data").string(), "--set", "paths.run=" + (dir / "run").string(),
            "--set", "world.n_sequences=3", "--set", "world.frames=8", "--set", "world.height=12", "--set",
            "world.width=12", "--set", "eval.n_sequences=2", "--set", "eval.frames=14", "--set",
            "train.spatial_steps=20", "--set", "train.temporal_steps=20", "--set", "model.width=6", "--set",
            "train.f_max=8", "--set", "schedule.steps=4", "--set", "oracle.samples=400", "--set", "oracle.steps=16"};
        auto with = [&](std::vector<std::string> extra) {
            std::vector<std::string> a = base;
            a.insert(a.end(), extra.begin(), extra.end());
            return a;
        };
        const fs::path test_seq = dir / "data" / "test" / "seq_0000";
        std::string stdout_log;
        for (const auto& args : std::vector<std::vector<std::string>>{
                 {"gen-data"},
                 {"gen-data", "--split", "test"},
                 {"train"},
                 {"train", "--stage", "2", "--joint", "--run", (dir / "joint").string()},
                 {"infer", "--input", (test_seq / "cond.vdt").string(), "--out", (dir / "pred.vdt").string()},
                 {"eval", "--pred", (dir / "pred.vdt").string(), "--gt", (test_seq / "depth.vdt").string(), "--cameras",
                  (test_seq / "cameras.vdt").string(), "--flows", (test_seq / "flows.vdt").string(), "--out",
                  (dir / "eval.csv").string()},
                 {"ablate", "--strategies", "all", "--out", (dir / "ablation.csv").string()},
                 {"ablate", "--sweep", "sigma_eps", "--out", (dir / "sweep.csv").string()},
                 {"oracle-check", "--out", (dir / "oracle.csv").string()},
                 {"show-config"}}) {
            if (args[0] == "train" && args.size() > 1) fs::copy(dir / "run" / "stage1.ckpt", dir / "joint" / "stage1.ckpt");
            const CliRun r = cli(with(args));
            // oracle-check on 400 samples may legitimately report exit 2; only reproducibility matters here.
            if (r.code != 0 && args[0] != "oracle-check") throw std::runtime_error(args[0] + " failed: " + r.err);
            stdout_log += args[0] + " exit " + std::to_string(r.code) + "\n" + r.out;
        }
        write_file(dir / "stdout.txt", stdout_log);
    };
    run_all(work / "repro_a");
    run_all(work / "repro_b");
    const auto a = tree_bytes(work / "repro_a");
    auto b = tree_bytes(work / "repro_b");
    std::size_t compared = 0;
    for (const auto& [name, bytes] : a) {
        auto it = b.find(name);
        if (it == b.end()) {
            fails.push_back("missing " + name);
            continue;
        }
        // Paths inside outputs differ between the two directories.
        std::string x = bytes, y = it->second;
        for (auto* s : {&x, &y}) {
            for (const std::string& from : {(work / "repro_a").string(), (work / "repro_b").string()}) {
                for (std::size_t pos; (pos = s->find(from)) != std::string::npos;) s->replace(pos, from.size(), "<dir>");
            }
        }
        if (x != y) fails.push_back("differs " + name);
        ++compared;
    }
    if (a.size() != b.size()) fails.push_back("file count differs");

    // Format round trips.
    Rng rng(41);
    const Clip c = random_clip(3, 2, 4, 5, rng);
    if (tensor_clip(decode_tensor(encode_tensor(clip_tensor(c, DType::f64)))) != c) fails.push_back("f64 TensorFile");
    Clip c32 = c;
    for (double& v : c32.data()) v = static_cast<float>(v);
    if (tensor_clip(decode_tensor(encode_tensor(clip_tensor(c32)))) != c32) fails.push_back("f32 TensorFile");
    RunConfig cfg;
    cfg.seed = 12345;
    cfg.stream.sigma_eps = std::exp(-6.0);
    cfg.model.dilations = {1, 3, 9};
    const std::string text = serialize_config(cfg);
    if (serialize_config(parse_config(text)) != text) fails.push_back("config");
    DenoiserModel model(small_net());
    const std::string ck = encode_checkpoint(model, {2, true});
    const Checkpoint back = decode_checkpoint(ck);
    if (encode_checkpoint(back.model, back.meta) != ck) fails.push_back("checkpoint");

    std::string detail = fmt("%zu output files byte-identical across two runs of every command at one thread; "
                             "TensorFile f32/f64, config and checkpoint round trips",
                             compared);
    for (const auto& f : fails) detail += "; " + f;
    report(9, fails.empty(), detail);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria 1-9"};
    std::string workdir = "acceptance_work";
    std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
    bool reuse = false;
    app.add_option("--workdir", workdir, "scratch directory for generated data and runs");
    app.add_option("--threads", threads, "worker threads for criteria 2-4")->check(CLI::PositiveNumber);
    app.add_flag("--reuse-toy", reuse, "reuse an existing toy checkpoint for criteria 3-4");
    CLI11_PARSE(app, argc, argv);
    const fs::path work(workdir);
    fs::create_directories(work);

    const std::vector<std::pair<int, std::function<void()>>> steps{
        {1, [&] { criterion1(); }},
        {2, [&] { criterion2(threads, work); }},
        {5, [&] { criterion5(); }},
        {6, [&] { criterion6(); }},
        {7, [&] { criterion7(work); }},
        {8, [&] { criterion8(); }},
        {9, [&] { criterion9(work); }},
        {3, [&] { criteria3and4(threads, work, reuse); }},
    };
    for (const auto& [id, fn] : steps) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(id, false, std::string("error: ") + e.what());
        }
    }

    std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
    std::printf("\nsummary\n");
    int hard_failures = 0;
    for (const auto& v : verdicts) {
        std::printf("  %d %-36s %s%s\n", v.id, v.name.c_str(), v.pass ? "PASS" : "FAIL", v.soft ? " (soft)" : "");
        if (!v.pass && !v.soft) ++hard_failures;
    }
    return hard_failures == 0 ? 0 : 1;
}
