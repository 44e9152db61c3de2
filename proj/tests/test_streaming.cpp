#include <gtest/gtest.h>

#include <cmath>

#include "grad_check.hpp"
#include "streamdepth/oracle.hpp"
#include "streamdepth/streaming.hpp"
#include "test_util.hpp"

using namespace streamdepth;
using streamdepth::testing::random_clip;

namespace {

DenoiserModel tiny_model() {
    NetConfig cfg;
    cfg.width = 4;
    cfg.attn_dim = 3;
    cfg.embed_freqs = 2;
    cfg.dilations = {1};
    cfg.init_seed = 11;
    DenoiserModel model(cfg);
    Rng rng(12);
    streamdepth::testing::randomize_temporal(model, 0.2, rng);
    return model;
}

StreamConfig tiny_stream(std::size_t f, std::size_t w, Strategy s) {
    StreamConfig cfg;
    cfg.clip_length = f;
    cfg.overlap = w;
    cfg.strategy = s;
    cfg.schedule = ScheduleParams{3};
    cfg.seed = 21;
    return cfg;
}

OracleConfig small_oracle(double rho_time, std::size_t samples) {
    OracleConfig cfg;
    cfg.frames = 4;
    cfg.frame_dim = 2;
    cfg.context = 2;
    cfg.rho_time = rho_time;
    cfg.samples = samples;
    cfg.steps = 32;
    cfg.seed = 3;
    return cfg;
}

Clip stream_all(const NetworkDenoiser& d, const Clip& video, const StreamConfig& cfg, std::size_t* clips = nullptr) {
    StreamRunner runner(d, cfg);
    std::vector<Clip> parts;
    for (std::size_t f = 0; f < video.frames(); ++f)
        if (auto out = runner.push(video.slice(f, 1))) parts.push_back(*out);
    if (auto out = runner.finish()) parts.push_back(*out);
    if (clips) *clips = runner.clips_run();
    return detail::concat_all(parts);
}

} // namespace

TEST(InferClip, SameSeedIsBitIdentical) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(1);
    const Clip cond = random_clip(3, 1, 4, 5, c);
    const NoiseSchedule s = make_schedule(ScheduleParams{4});
    Rng a(9), b(9);
    EXPECT_EQ(infer_clip(d, cond, s, a), infer_clip(d, cond, s, b));
    EXPECT_THROW(infer_clip(d, Clip{}, s, a), std::invalid_argument);
}

TEST(InferClip, SingleStepIsPosteriorMeanOfPureNoise) {
    const GaussianVideoPrior prior = make_oracle_prior(small_oracle(0.9, 2));
    const GaussianOracleDenoiser oracle(prior);
    const Clip cond = detail::dummy_condition(prior, prior.frames());
    const NoiseSchedule s = make_schedule(ScheduleParams{1});
    Rng a(4), b(4);
    const Clip out = infer_clip(oracle, cond, s, a);
    Clip noise(prior.frames(), 1, 1, prior.frame_dim());
    fill_standard_normal(noise.data(), b);
    for (double& v : noise.data()) v *= s.sigma_max();
    const Clip expected = oracle.denoise(noise, SigmaVector(prior.frames(), s.sigma_max()), cond);
    EXPECT_LT(streamdepth::testing::max_abs_diff(out, expected), 1e-12);
}

TEST(InferClip, OracleSamplesMatchPriorMoments) {
    const OracleConfig cfg = [] {
        OracleConfig c = small_oracle(0.9, 10000);
        c.steps = 64;
        return c;
    }();
    const SamplerFidelity f = sampler_fidelity(make_oracle_prior(cfg), cfg);
    EXPECT_LT(f.mean_error, 0.05);
    EXPECT_LT(f.cov_error, 0.1);
}

TEST(StreamConfig, ValidatesOverlapAndSigmaEps) {
    EXPECT_THROW(tiny_stream(4, 4, Strategy::naive).validate(), std::invalid_argument);
    EXPECT_NO_THROW(tiny_stream(4, 0, Strategy::naive).validate());
    EXPECT_THROW(tiny_stream(4, 0, Strategy::replacement).validate(), std::invalid_argument);
    EXPECT_THROW(tiny_stream(4, 0, Strategy::context_aware).validate(), std::invalid_argument);
    StreamConfig c = tiny_stream(4, 2, Strategy::context_aware);
    c.sigma_eps = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.strategy = Strategy::replacement;
    EXPECT_NO_THROW(c.validate());
}

TEST(StreamConfig, StrategyNames) {
    for (Strategy s : {Strategy::naive, Strategy::replacement, Strategy::context_aware})
        EXPECT_EQ(parse_strategy(to_string(s)), s);
    EXPECT_EQ(parse_strategy("context_aware"), Strategy::context_aware);
    EXPECT_THROW(parse_strategy("blend"), std::invalid_argument);
}

TEST(ClipCount, WindowArithmetic) {
    EXPECT_EQ(clip_count(200, 10, 5), 39u);
    EXPECT_EQ(clip_count(10, 10, 5), 1u);
    EXPECT_EQ(clip_count(3, 10, 5), 1u);
    EXPECT_EQ(clip_count(11, 10, 5), 2u);
    EXPECT_EQ(clip_count(20, 10, 0), 2u);
    EXPECT_EQ(clip_count(0, 10, 5), 0u);
    EXPECT_THROW(clip_count(5, 4, 4), std::invalid_argument);
}

TEST(SlidingWindow, VideoOfOneClipEqualsInferClip) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(2);
    const Clip video = random_clip(4, 1, 4, 4, c);
    const NoiseSchedule s = make_schedule(ScheduleParams{3});
    for (Strategy strategy : {Strategy::naive, Strategy::replacement, Strategy::context_aware}) {
        const StreamConfig cfg = tiny_stream(4, 2, strategy);
        Rng rng(cfg.seed);
        EXPECT_EQ(sliding_window(d, video, cfg), infer_clip(d, video, s, rng));
    }
}

TEST(SlidingWindow, ShortVideoIsPaddedThenTrimmed) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(3);
    const Clip video = random_clip(2, 1, 4, 4, c);
    const StreamConfig cfg = tiny_stream(4, 1, Strategy::naive);
    const Clip padded = Clip::concat(video, Clip::concat(video.slice(1, 1), video.slice(1, 1)));
    Rng rng(cfg.seed);
    const Clip expected = infer_clip(d, padded, make_schedule(cfg.schedule), rng).slice(0, 2);
    EXPECT_EQ(sliding_window(d, video, cfg), expected);
}

TEST(SlidingWindow, DisjointClipsConcatenate) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(4);
    const Clip video = random_clip(6, 1, 4, 4, c);
    const StreamConfig cfg = tiny_stream(3, 0, Strategy::naive);
    const NoiseSchedule s = make_schedule(cfg.schedule);
    Rng rng(cfg.seed);
    const Clip first = infer_clip(d, video.slice(0, 3), s, rng);
    const Clip second = infer_clip(d, video.slice(3, 3), s, rng);
    EXPECT_EQ(naive_sliding_window(d, video, cfg), Clip::concat(first, second));
}

TEST(SlidingWindow, FirstClipIdenticalAcrossStrategies) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(5);
    const Clip video = random_clip(9, 1, 4, 4, c);
    const Clip naive = naive_sliding_window(d, video, tiny_stream(4, 2, Strategy::naive));
    const Clip repl = replacement_sliding_window(d, video, tiny_stream(4, 2, Strategy::replacement));
    const Clip ctx = context_aware_sliding_window(d, video, tiny_stream(4, 2, Strategy::context_aware));
    EXPECT_EQ(naive.slice(0, 4), repl.slice(0, 4));
    EXPECT_EQ(naive.slice(0, 4), ctx.slice(0, 4));
    EXPECT_NE(naive.slice(4, 5), ctx.slice(4, 5));
}

TEST(SlidingWindow, OutputLengthMatchesInput) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(6);
    const Clip video = random_clip(13, 1, 3, 3, c);
    for (std::size_t f = 1; f <= 6; ++f)
        for (std::size_t w = 0; w < f; ++w)
            for (std::size_t n : {1u, 2u, 5u, 7u, 13u}) {
                const Strategy s = w == 0 ? Strategy::naive : Strategy::context_aware;
                const Clip out = sliding_window(d, video.slice(0, n), tiny_stream(f, w, s));
                EXPECT_EQ(out.frames(), n) << "F=" << f << " W=" << w << " N=" << n;
            }
}

TEST(SlidingWindow, ClipRecordsFollowWindowArithmetic) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(7);
    const Clip video = random_clip(23, 1, 3, 3, c);
    std::vector<ClipRecord> records;
    StreamHooks hooks;
    hooks.on_clip = [&](const ClipRecord& r) { records.push_back(r); };
    sliding_window(d, video, tiny_stream(10, 5, Strategy::context_aware), hooks);
    ASSERT_EQ(records.size(), clip_count(23, 10, 5));
    EXPECT_EQ(records[0].emitted_count, 10u);
    EXPECT_EQ(records[1].first_frame, 5u);
    EXPECT_EQ(records[1].emitted_first, 10u);
    EXPECT_EQ(records[1].emitted_count, 5u);
    EXPECT_EQ(records[2].first_frame, 10u);
    EXPECT_EQ(records[3].emitted_count, 3u);
    for (const auto& r : records) EXPECT_EQ(r.denoiser_calls, 3u);
}

TEST(SlidingWindow, OneFrameAutoregressionWhenOverlapIsFMinusOne) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(8);
    const Clip video = random_clip(6, 1, 3, 3, c);
    std::vector<ClipRecord> records;
    StreamHooks hooks;
    hooks.on_clip = [&](const ClipRecord& r) { records.push_back(r); };
    const Clip out = sliding_window(d, video, tiny_stream(2, 1, Strategy::context_aware), hooks);
    ASSERT_EQ(records.size(), 5u);
    for (std::size_t k = 1; k < records.size(); ++k) {
        EXPECT_EQ(records[k].emitted_count, 1u);
        EXPECT_EQ(records[k].emitted_first, k + 1);
    }
    EXPECT_EQ(out.frames(), 6u);
}

TEST(SlidingWindow, EarlierFramesNeverRewritten) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(9);
    const Clip video = random_clip(12, 1, 3, 3, c);
    for (Strategy s : {Strategy::naive, Strategy::replacement, Strategy::context_aware}) {
        const StreamConfig cfg = tiny_stream(4, 2, s);
        const Clip longer = sliding_window(d, video, cfg);
        const Clip shorter = sliding_window(d, video.slice(0, 8), cfg);
        EXPECT_EQ(longer.slice(0, 8), shorter) << to_string(s);
    }
}

TEST(SlidingWindow, DeterministicGivenSeed) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(10);
    const Clip video = random_clip(9, 1, 3, 3, c);
    StreamConfig cfg = tiny_stream(4, 2, Strategy::replacement);
    const Clip a = sliding_window(d, video, cfg);
    EXPECT_EQ(a, sliding_window(d, video, cfg));
    cfg.seed += 1;
    EXPECT_NE(a, sliding_window(d, video, cfg));
}

TEST(StreamRunner, MatchesBatchDriverBitwise) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(11);
    const Clip video = random_clip(17, 1, 3, 3, c);
    for (Strategy s : {Strategy::naive, Strategy::replacement, Strategy::context_aware})
        for (std::size_t n : {3u, 4u, 9u, 17u}) {
            const StreamConfig cfg = tiny_stream(4, s == Strategy::naive ? 0 : 3, s);
            EXPECT_EQ(stream_all(d, video.slice(0, n), cfg), sliding_window(d, video.slice(0, n), cfg))
                << to_string(s) << " N=" << n;
        }
}

TEST(StreamRunner, ClipCountsForFullAndLongStreams) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(12);
    StreamConfig cfg = tiny_stream(10, 5, Strategy::context_aware);
    cfg.schedule = ScheduleParams{1};
    std::size_t clips = 0;
    const Clip ten = random_clip(10, 1, 2, 2, c);
    EXPECT_EQ(stream_all(d, ten, cfg, &clips).frames(), 10u);
    EXPECT_EQ(clips, 1u);
    const Clip video = random_clip(200, 1, 2, 2, c);
    EXPECT_EQ(stream_all(d, video, cfg, &clips).frames(), 200u);
    EXPECT_EQ(clips, 39u);
}

TEST(StreamRunner, EmitsAsSoonAsWindowIsFull) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(13);
    StreamRunner runner(d, tiny_stream(4, 2, Strategy::context_aware));
    for (std::size_t f = 0; f < 3; ++f) EXPECT_FALSE(runner.push(random_clip(1, 1, 3, 3, c)).has_value());
    const auto first = runner.push(random_clip(1, 1, 3, 3, c));
    ASSERT_TRUE(first.has_value());
    EXPECT_EQ(first->frames(), 4u);
    EXPECT_EQ(runner.state().global_frame_index, 4u);
    ASSERT_TRUE(runner.state().context_frames.has_value());
    EXPECT_EQ(runner.state().context_frames->frames(), 2u);
    EXPECT_FALSE(runner.push(random_clip(1, 1, 3, 3, c)).has_value());
    const auto second = runner.push(random_clip(1, 1, 3, 3, c));
    ASSERT_TRUE(second.has_value());
    EXPECT_EQ(second->frames(), 2u);
    EXPECT_FALSE(runner.finish().has_value());
}

TEST(StreamRunner, RejectsMismatchedFrameWithPosition) {
    const DenoiserModel model = tiny_model();
    const NetworkDenoiser d{model};
    Rng c(14);
    StreamRunner runner(d, tiny_stream(4, 2, Strategy::context_aware));
    runner.push(random_clip(1, 1, 3, 3, c));
    runner.push(random_clip(1, 1, 3, 3, c));
    try {
        runner.push(random_clip(1, 1, 3, 4, c));
        FAIL() << "expected a shape error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("frame 2"), std::string::npos) << e.what();
    }
    runner.finish();
    EXPECT_THROW(runner.push(random_clip(1, 1, 3, 3, c)), std::invalid_argument);
}

TEST(OracleWorld, ReplacementWithIndependentFramesKeepsPriorMarginals) {
    OracleConfig cfg = small_oracle(0.0, 4000);
    cfg.steps = 64;
    const GaussianVideoPrior prior = make_oracle_prior(cfg);
    const GaussianOracleDenoiser oracle(prior);
    const NoiseSchedule s = make_schedule(ScheduleParams{cfg.steps});
    const std::size_t w = cfg.context, d = prior.frame_dim();
    const Clip context = prior.to_clip(prior.mean()).slice(0, w);
    const Clip cond = detail::dummy_condition(prior, cfg.frames);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>((cfg.frames - w) * d));
    Eigen::VectorXd sq = sum;
    for (std::size_t i = 0; i < cfg.samples; ++i) {
        Rng rng(derive_seed(7, i));
        const Clip out = infer_continuation(oracle, cond, context, Strategy::replacement, cfg.sigma_eps, s, rng);
        const Eigen::VectorXd fresh = prior.flatten(out).tail(sum.size());
        sum += fresh;
        sq += fresh.cwiseProduct(fresh);
    }
    const double n = static_cast<double>(cfg.samples);
    const Eigen::VectorXd mean = sum / n;
    const Eigen::VectorXd var = sq / n - mean.cwiseProduct(mean);
    const Eigen::VectorXd prior_mean = prior.mean().tail(sum.size());
    const Eigen::VectorXd prior_var = prior.cov().diagonal().tail(sum.size());
    EXPECT_LT((mean - prior_mean).cwiseAbs().maxCoeff(), 0.06);
    EXPECT_LT((var - prior_var).cwiseAbs().maxCoeff(), 0.1);
}

TEST(OracleWorld, ContextAwareRemovesReplacementBias) {
    const OracleConfig cfg = small_oracle(0.9, 4000);
    const ContextReport r = context_check(make_oracle_prior(cfg), cfg);
    const Estimate repl = r.bias_of(Strategy::replacement).bias;
    const Estimate ours = r.bias_of(Strategy::context_aware).bias;
    EXPECT_GT(repl.lo, 0.0);
    EXPECT_LT(ours.value, 0.05);
    EXPECT_TRUE(ours.below(repl)) << "ours [" << ours.lo << ", " << ours.hi << "] repl [" << repl.lo << ", "
                                  << repl.hi << "]";
}

TEST(OracleWorld, NaiveSeamExceedsWithinClipSteps) {
    const OracleConfig cfg = small_oracle(0.9, 1000);
    const ContextReport r = context_check(make_oracle_prior(cfg), cfg);
    const SeamStats naive = r.seam_of(Strategy::naive);
    const SeamStats ours = r.seam_of(Strategy::context_aware);
    EXPECT_GT(naive.seam, naive.within);
    EXPECT_GT(naive.seam, ours.seam);
    EXPECT_NEAR(ours.ratio(), 1.0, 0.25);
}
