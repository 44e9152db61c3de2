#pragma once

// File formats: tensor files, model checkpoints, key=value run configs and
// on-disk datasets.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "streamdepth/network.hpp"
#include "streamdepth/oracle.hpp"
#include "streamdepth/streaming.hpp"
#include "streamdepth/training.hpp"
#include "streamdepth/worldgen.hpp"

namespace streamdepth {

namespace fs = std::filesystem;

/// File-system failure, always carrying the offending path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration text or value.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Byte helpers (little-endian on disk regardless of host order)

namespace detail {

template <class T>
T byteswap_if_big(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
}

template <class T>
void put(std::string& buf, T v) {
    const auto le = byteswap_if_big(v);
    char raw[sizeof(T)];
    std::memcpy(raw, &le, sizeof(T));
    buf.append(raw, sizeof(T));
}

class ByteReader {
public:
    ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return byteswap_if_big(v);
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
    [[nodiscard]] const std::string& what() const { return what_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
    std::string what_;
};

} // namespace detail

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
    return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Tensor files: "VDT1", u8 dtype, u32 ndim, u32 dims[ndim], row-major payload.

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<double> values;
    DType dtype = DType::f32;

    [[nodiscard]] std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    [[nodiscard]] std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
        return s + "]";
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline constexpr std::string_view kTensorMagic = "VDT1";

inline std::string encode_tensor(const Tensor& t) {
    detail::require(t.values.size() == t.element_count(), "encode_tensor: value count does not match dims");
    detail::require(t.dtype == DType::f32 || t.dtype == DType::f64, "encode_tensor: unknown dtype");
    std::string buf(kTensorMagic);
    detail::put(buf, static_cast<std::uint8_t>(t.dtype));
    detail::put(buf, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put(buf, d);
    for (double v : t.values) {
        if (t.dtype == DType::f32) {
            detail::put(buf, static_cast<float>(v));
        } else {
            detail::put(buf, v);
        }
    }
    return buf;
}

inline Tensor decode_tensor(std::string_view bytes, const std::string& what = "tensor") {
    detail::ByteReader r(bytes, what);
    if (r.take(4) != kTensorMagic) throw FormatError(what + ": bad magic (expected VDT1)");
    Tensor t;
    const auto code = r.get<std::uint8_t>();
    if (code > 1) throw FormatError(what + ": unknown dtype code " + std::to_string(code));
    t.dtype = static_cast<DType>(code);
    const auto ndim = r.get<std::uint32_t>();
    if (ndim > 16) throw FormatError(what + ": implausible rank " + std::to_string(ndim));
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        t.dims.push_back(r.get<std::uint32_t>());
        count *= t.dims.back();
    }
    const std::uint64_t payload = count * dtype_size(t.dtype);
    if (r.remaining() < payload) throw FormatError(what + ": truncated payload");
    if (r.remaining() > payload) throw FormatError(what + ": trailing bytes after payload");
    t.values.resize(count);
    for (auto& v : t.values) v = t.dtype == DType::f32 ? static_cast<double>(r.get<float>()) : r.get<double>();
    return t;
}

inline void write_tensor(const fs::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

inline Tensor read_tensor(const fs::path& path) { return decode_tensor(read_file(path), path.string()); }

inline Tensor clip_tensor(const Clip& c, DType dtype = DType::f32) {
    return {{static_cast<std::uint32_t>(c.frames()), static_cast<std::uint32_t>(c.channels()),
             static_cast<std::uint32_t>(c.height()), static_cast<std::uint32_t>(c.width())},
            c.data(),
            dtype};
}

inline Clip tensor_clip(const Tensor& t, const std::string& what = "tensor") {
    if (t.dims.size() != 4) throw FormatError(what + ": expected a 4-D F x C x H x W tensor, got " + t.shape_string());
    for (auto d : t.dims)
        if (d == 0) throw FormatError(what + ": zero-sized dimension in " + t.shape_string());
    for (double v : t.values)
        if (!std::isfinite(v)) throw FormatError(what + ": non-finite value");
    return Clip(t.dims[0], t.dims[1], t.dims[2], t.dims[3], t.values);
}

inline void write_clip(const fs::path& path, const Clip& c, DType dtype = DType::f32) {
    write_tensor(path, clip_tensor(c, dtype));
}

inline Clip read_clip(const fs::path& path) { return tensor_clip(read_tensor(path), path.string()); }

/// Cameras as an F x 21 f64 tensor: K (row-major), R (row-major), t.
inline Tensor cameras_tensor(const std::vector<CameraFrame>& cams) {
    Tensor t{{static_cast<std::uint32_t>(cams.size()), 21}, {}, DType::f64};
    for (const auto& c : cams) {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) t.values.push_back(c.K(i, j));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) t.values.push_back(c.R(i, j));
        for (int i = 0; i < 3; ++i) t.values.push_back(c.t(i));
    }
    return t;
}

inline std::vector<CameraFrame> tensor_cameras(const Tensor& t, const std::string& what = "cameras") {
    if (t.dims.size() != 2 || t.dims[1] != 21)
        throw FormatError(what + ": expected an F x 21 camera tensor, got " + t.shape_string());
    std::vector<CameraFrame> cams(t.dims[0]);
    for (std::size_t f = 0; f < cams.size(); ++f) {
        const double* v = t.values.data() + f * 21;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                cams[f].K(i, j) = v[3 * i + j];
                cams[f].R(i, j) = v[9 + 3 * i + j];
            }
        for (int i = 0; i < 3; ++i) cams[f].t(i) = v[18 + i];
        try {
            cams[f].validate();
        } catch (const std::invalid_argument& e) {
            throw FormatError(what + ": camera " + std::to_string(f) + ": " + e.what());
        }
    }
    return cams;
}

// ---------------------------------------------------------------------------
// Checkpoints: "VDCK", u32 version, u8 stage, u8 joint, network config, tensors.

inline constexpr std::string_view kCheckpointMagic = "VDCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::uint8_t stage = 0;  // last completed training stage: 0 (init), 1 or 2
    bool joint = false;
    friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
    DenoiserModel model;
    CheckpointMeta meta;
};

inline std::string encode_checkpoint(const DenoiserModel& model, const CheckpointMeta& meta) {
    std::string buf(kCheckpointMagic);
    detail::put(buf, kCheckpointVersion);
    detail::put(buf, meta.stage);
    detail::put(buf, static_cast<std::uint8_t>(meta.joint));
    const NetConfig& c = model.config();
    detail::put(buf, static_cast<std::uint32_t>(c.cond_channels));
    detail::put(buf, static_cast<std::uint32_t>(c.width));
    detail::put(buf, static_cast<std::uint32_t>(c.attn_dim));
    detail::put(buf, static_cast<std::uint32_t>(c.embed_freqs));
    detail::put(buf, static_cast<std::uint32_t>(c.dilations.size()));
    for (auto d : c.dilations) detail::put(buf, static_cast<std::uint32_t>(d));
    detail::put(buf, static_cast<std::uint8_t>(c.coord_channels));
    detail::put(buf, c.init_seed);
    detail::put(buf, static_cast<std::uint8_t>(model.temporal_enabled));
    const ParamSet& p = model.params();
    detail::put(buf, static_cast<std::uint32_t>(p.size()));
    for (const auto& t : p.tensors) {
        detail::put(buf, static_cast<std::uint32_t>(t.name.size()));
        buf += t.name;
        detail::put(buf, static_cast<std::uint8_t>(t.group));
        detail::put(buf, static_cast<std::uint32_t>(t.value.rows()));
        detail::put(buf, static_cast<std::uint32_t>(t.value.cols()));
        for (Eigen::Index i = 0; i < t.value.size(); ++i) detail::put(buf, t.value.data()[i]);
    }
    return buf;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
    detail::ByteReader r(bytes, what);
    if (r.take(4) != kCheckpointMagic) throw FormatError(what + ": bad magic (expected VDCK)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw FormatError(what + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    CheckpointMeta meta;
    meta.stage = r.get<std::uint8_t>();
    meta.joint = r.get<std::uint8_t>() != 0;
    NetConfig c;
    c.cond_channels = r.get<std::uint32_t>();
    c.width = r.get<std::uint32_t>();
    c.attn_dim = r.get<std::uint32_t>();
    c.embed_freqs = r.get<std::uint32_t>();
    const auto n_dil = r.get<std::uint32_t>();
    if (n_dil > 64) throw FormatError(what + ": implausible block count");
    c.dilations.clear();
    for (std::uint32_t i = 0; i < n_dil; ++i) c.dilations.push_back(r.get<std::uint32_t>());
    c.coord_channels = r.get<std::uint8_t>() != 0;
    c.init_seed = r.get<std::uint64_t>();
    const bool temporal_enabled = r.get<std::uint8_t>() != 0;
    std::optional<DenoiserModel> model;
    try {
        model.emplace(c);
    } catch (const std::invalid_argument& e) {
        throw FormatError(what + ": invalid network config: " + e.what());
    }
    model->temporal_enabled = temporal_enabled;
    ParamSet& p = model->params();
    const auto count = r.get<std::uint32_t>();
    if (count != p.size()) throw FormatError(what + ": tensor count does not match the network config");
    for (auto& t : p.tensors) {
        const auto len = r.get<std::uint32_t>();
        const std::string name(r.take(len));
        const auto group = r.get<std::uint8_t>();
        const auto rows = r.get<std::uint32_t>();
        const auto cols = r.get<std::uint32_t>();
        if (name != t.name || group != static_cast<std::uint8_t>(t.group) || rows != t.value.rows() ||
            cols != t.value.cols())
            throw FormatError(what + ": tensor '" + name + "' does not match the network layout");
        for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = r.get<double>();
    }
    if (r.remaining() != 0) throw FormatError(what + ": trailing bytes");
    return {std::move(*model), meta};
}

inline void save_checkpoint(const fs::path& path, const DenoiserModel& model, const CheckpointMeta& meta) {
    write_file(path, encode_checkpoint(model, meta));
}

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Number formatting shared by configs and CSVs: shortest round-trip text.

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

// ---------------------------------------------------------------------------
// Run configuration

/// Every tunable of the pipeline, with defaults sized for the toy task.
/// Component seeds are derived from `seed`.
struct RunConfig {
    std::uint64_t seed = 0;
    WorldConfig world{};
    std::size_t test_sequences = 10;
    std::size_t test_frames = 60;
    NetConfig model{};
    TrainConfig train = [] {
        TrainConfig t;
        t.learning_rate = 2e-3;
        t.spatial_steps = 1500;
        t.temporal_steps = 600;
        return t;
    }();
    StreamConfig stream{};
    OracleConfig oracle{};
    std::string data_dir = "data";
    std::string run_dir = "run";

    /// Copy with component seeds derived from the master seed.
    [[nodiscard]] RunConfig resolved() const {
        RunConfig c = *this;
        c.world.seed = seed;
        c.model.init_seed = derive_seed(seed, 1);
        c.train.seed = derive_seed(seed, 2);
        c.stream.seed = derive_seed(seed, 3);
        c.oracle.seed = derive_seed(seed, 4);
        return c;
    }

    void validate() const {
        world.validate();
        model.validate();
        train.validate();
        stream.validate();
        oracle.validate();
        detail::require(test_sequences >= 1 && test_frames >= 1, "RunConfig: held-out set must be non-empty");
    }
};

namespace detail {

struct ConfigField {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string&)> set;
};

template <class T>
T parse_number(const std::string& text, const std::string& key) {
    T v{};
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    return v;
}

inline bool parse_bool(const std::string& text, const std::string& key) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<ConfigField> config_fields(RunConfig& c) {
    std::vector<ConfigField> f;
    auto size_field = [&f](std::string key, std::size_t& ref) {
        f.push_back({key, [&ref] { return std::to_string(ref); },
                     [&ref, key](const std::string& v) { ref = parse_number<std::size_t>(v, key); }});
    };
    auto u64_field = [&f](std::string key, std::uint64_t& ref) {
        f.push_back({key, [&ref] { return std::to_string(ref); },
                     [&ref, key](const std::string& v) { ref = parse_number<std::uint64_t>(v, key); }});
    };
    auto real_field = [&f](std::string key, double& ref) {
        f.push_back({key, [&ref] { return format_double(ref); }, [&ref, key](const std::string& v) {
                         ref = parse_number<double>(v, key);
                         if (!std::isfinite(ref)) throw ConfigError("config key '" + key + "': value must be finite");
                     }});
    };
    auto bool_field = [&f](std::string key, bool& ref) {
        f.push_back({key, [&ref] { return std::string(ref ? "true" : "false"); },
                     [&ref, key](const std::string& v) { ref = parse_bool(v, key); }});
    };
    auto text_field = [&f](std::string key, std::string& ref) {
        f.push_back({key, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }});
    };

    u64_field("seed", c.seed);
    text_field("paths.data", c.data_dir);
    text_field("paths.run", c.run_dir);

    size_field("world.height", c.world.height);
    size_field("world.width", c.world.width);
    size_field("world.frames", c.world.frames);
    size_field("world.n_sequences", c.world.sequences);
    bool_field("world.moving_sphere", c.world.moving_sphere);
    real_field("world.speed", c.world.speed);

    size_field("eval.n_sequences", c.test_sequences);
    size_field("eval.frames", c.test_frames);

    size_field("model.width", c.model.width);
    size_field("model.attn_dim", c.model.attn_dim);
    size_field("model.embed_freqs", c.model.embed_freqs);
    bool_field("model.coord_channels", c.model.coord_channels);
    f.push_back({"model.dilations",
                 [&c] {
                     std::string s;
                     for (std::size_t i = 0; i < c.model.dilations.size(); ++i)
                         s += (i ? "," : "") + std::to_string(c.model.dilations[i]);
                     return s;
                 },
                 [&c](const std::string& v) {
                     std::vector<std::size_t> d;
                     std::stringstream ss(v);
                     std::string part;
                     while (std::getline(ss, part, ',')) d.push_back(parse_number<std::size_t>(trim(part), "model.dilations"));
                     if (d.empty()) throw ConfigError("config key 'model.dilations': empty list");
                     c.model.dilations = d;
                 }});

    real_field("train.learning_rate", c.train.learning_rate);
    size_field("train.batch_size", c.train.batch_size);
    size_field("train.spatial_steps", c.train.spatial_steps);
    size_field("train.temporal_steps", c.train.temporal_steps);
    size_field("train.f_max", c.train.f_max);
    real_field("train.p_mean", c.train.p_mean);
    real_field("train.p_std", c.train.p_std);
    real_field("train.sigma_data", c.train.sigma_data);

    size_field("stream.clip_length", c.stream.clip_length);
    size_field("stream.overlap", c.stream.overlap);
    f.push_back({"stream.strategy", [&c] { return std::string(to_string(c.stream.strategy)); },
                 [&c](const std::string& v) {
                     try {
                         c.stream.strategy = parse_strategy(v);
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(std::string("config key 'stream.strategy': ") + e.what());
                     }
                 }});
    real_field("stream.sigma_eps", c.stream.sigma_eps);

    size_field("schedule.steps", c.stream.schedule.steps);
    real_field("schedule.sigma_min", c.stream.schedule.sigma_min);
    real_field("schedule.sigma_max", c.stream.schedule.sigma_max);
    real_field("schedule.rho", c.stream.schedule.rho);

    size_field("oracle.frames", c.oracle.frames);
    size_field("oracle.frame_dim", c.oracle.frame_dim);
    real_field("oracle.rho_time", c.oracle.rho_time);
    real_field("oracle.rho_space", c.oracle.rho_space);
    size_field("oracle.context", c.oracle.context);
    size_field("oracle.samples", c.oracle.samples);
    size_field("oracle.steps", c.oracle.steps);
    real_field("oracle.sigma_eps", c.oracle.sigma_eps);
    return f;
}

} // namespace detail

/// Applies one key=value assignment; unknown keys are rejected.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (auto& field : detail::config_fields(cfg)) {
        if (field.key == key) {
            field.set(value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

/// All keys in canonical order.
inline std::vector<std::string> config_keys() {
    RunConfig scratch;
    std::vector<std::string> keys;
    for (const auto& f : detail::config_fields(scratch)) keys.push_back(f.key);
    return keys;
}

/// Flat "key = value" text in canonical key order.
inline std::string serialize_config(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::string out;
    for (const auto& f : detail::config_fields(copy)) out += f.key + " = " + f.get() + "\n";
    return out;
}

/// Parses key = value lines on top of the defaults. '#' starts a comment.
inline RunConfig parse_config(std::string_view text, const std::string& what = "config") {
    RunConfig cfg;
    std::map<std::string, std::size_t> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const std::string where = what + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
            throw ConfigError(where + ": key '" + key + "' already set on line " + std::to_string(it->second));
        try {
            set_config_value(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_config(const fs::path& path) { return parse_config(read_file(path), path.string()); }

/// CHRONO_SEED, when set, replaces the configured seed.
inline void apply_seed_override(RunConfig& cfg) {
    if (const char* env = std::getenv("CHRONO_SEED"); env && *env)
        cfg.seed = detail::parse_number<std::uint64_t>(detail::trim(env), "CHRONO_SEED");
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_line(const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) s += ',';
        s += cells[i];
    }
    return s + "\n";
}

// ---------------------------------------------------------------------------
// Datasets on disk: <dir>/manifest.csv plus seq_NNNN/{cond,depth,cameras,flows}.vdt

struct StoredSequence {
    std::string name;
    Clip cond;
    Clip depth;
    std::vector<CameraFrame> cameras;
    std::optional<Clip> flows;
    double norm_lo = 0.0;
    double norm_hi = 1.0;

    [[nodiscard]] Clip normalized_depth() const {
        Clip out = depth;
        const double scale = 2.0 / (norm_hi - norm_lo);
        for (double& v : out.data()) v = scale * (v - norm_lo) - 1.0;
        return out;
    }
};

inline constexpr std::string_view kManifestHeader = "name,frames,height,width,norm_lo,norm_hi";

inline std::string sequence_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%04zu", i);
    return buf;
}

inline void write_sequence(const fs::path& dir, const Sequence& s) {
    write_clip(dir / "cond.vdt", s.cond);
    write_clip(dir / "depth.vdt", s.depth);
    write_tensor(dir / "cameras.vdt", cameras_tensor(s.cameras));
    if (!s.flows.empty()) write_clip(dir / "flows.vdt", s.flows);
}

inline void write_dataset(const fs::path& dir, const std::vector<Sequence>& seqs) {
    std::string manifest = std::string(kManifestHeader) + "\n";
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto& s = seqs[i];
        const std::string name = sequence_name(i);
        write_sequence(dir / name, s);
        manifest += csv_line({name, std::to_string(s.depth.frames()), std::to_string(s.depth.height()),
                              std::to_string(s.depth.width()), format_double(s.norm_lo), format_double(s.norm_hi)});
    }
    write_file(dir / "manifest.csv", manifest);
}

inline std::vector<StoredSequence> read_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.csv";
    if (!fs::exists(manifest_path)) throw IoError("dataset manifest '" + manifest_path.string() + "' not found");
    std::istringstream in(read_file(manifest_path));
    std::string line;
    std::getline(in, line);
    if (detail::trim(line) != kManifestHeader)
        throw FormatError(manifest_path.string() + ": unexpected header '" + line + "'");
    std::vector<StoredSequence> out;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(detail::trim(cell));
        if (cells.size() != 6) throw FormatError(manifest_path.string() + ": malformed row '" + line + "'");
        StoredSequence s;
        s.name = cells[0];
        const fs::path sd = dir / s.name;
        s.cond = read_clip(sd / "cond.vdt");
        s.depth = read_clip(sd / "depth.vdt");
        s.cameras = tensor_cameras(read_tensor(sd / "cameras.vdt"), (sd / "cameras.vdt").string());
        if (fs::exists(sd / "flows.vdt")) s.flows = read_clip(sd / "flows.vdt");
        try {
            s.norm_lo = detail::parse_number<double>(cells[4], "norm_lo");
            s.norm_hi = detail::parse_number<double>(cells[5], "norm_hi");
        } catch (const ConfigError& e) {
            throw FormatError(manifest_path.string() + ": " + e.what());
        }
        const std::size_t frames = detail::parse_number<std::size_t>(cells[1], "frames");
        if (s.depth.frames() != frames || !s.cond.same_spatial(s.depth) || s.cond.frames() != frames ||
            s.cameras.size() != frames)
            throw FormatError(sd.string() + ": tensors disagree with the manifest");
        out.push_back(std::move(s));
    }
    if (out.empty()) throw FormatError(manifest_path.string() + ": no sequences listed");
    return out;
}

} // namespace streamdepth
