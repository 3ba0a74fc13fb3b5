#pragma once

// On-disk formats: HYT1 tensors, 16-bit PGM / 8-bit PPM images, the
// `[section]` / `key = value` run configuration, checkpoints, dataset
// directories and metrics CSV. Every file is written to a temporary name and
// renamed into place.

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "hydra/common.hpp"
#include "hydra/fusion.hpp"
#include "hydra/params.hpp"
#include "hydra/recon.hpp"
#include "hydra/scene.hpp"
#include "hydra/training.hpp"

namespace hydra {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Whole-file helpers.

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw DataError("read failed: " + path.string());
    return std::move(ss).str();
}

/// Writes `<path>.tmp` and renames it over `path`.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path() && !fs::exists(path.parent_path()))
        throw DataError("output directory does not exist: " + path.parent_path().string());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot create " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw DataError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError("cannot move output into place: " + path.string());
    }
}

// ---------------------------------------------------------------------------
// HYT1 tensors.

enum class DType : std::uint8_t { F32 = 0, F64 = 1, C64 = 2, C128 = 3 };

inline std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::C64: return 8;
        case DType::C128: return 16;
    }
    throw DataError("unknown dtype");
}

inline const char* to_string(DType t) {
    switch (t) {
        case DType::F32: return "f32";
        case DType::F64: return "f64";
        case DType::C64: return "c64";
        case DType::C128: return "c128";
    }
    return "?";
}

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

inline std::size_t checked_count(const std::vector<std::uint32_t>& dims, std::size_t elem) {
    std::uint64_t n = 1;
    for (auto d : dims) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) throw DataError("tensor dims overflow");
        n *= d;
    }
    if (n > std::numeric_limits<std::size_t>::max() / elem / 2) throw DataError("tensor dims overflow");
    return static_cast<std::size_t>(n);
}

}  // namespace detail

/// Real components are stored as their IEEE bit patterns, so values (NaN
/// payloads included) survive a round trip exactly.
struct Tensor {
    DType dtype = DType::F64;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint64_t> words;  // one entry per real component

    std::size_t count() const { return detail::checked_count(dims, 1); }
    std::size_t components() const { return dtype == DType::C64 || dtype == DType::C128 ? 2 : 1; }

    static std::vector<std::uint32_t> to_dims(std::initializer_list<std::size_t> d) {
        std::vector<std::uint32_t> out;
        for (auto v : d) {
            if (v > std::numeric_limits<std::uint32_t>::max()) throw DomainError("tensor dimension exceeds u32");
            out.push_back(static_cast<std::uint32_t>(v));
        }
        return out;
    }

    static Tensor f64(std::vector<std::uint32_t> dims, const std::vector<double>& v) {
        Tensor t{DType::F64, std::move(dims), {}};
        if (t.count() != v.size()) throw DomainError("tensor: value count does not match dims");
        for (double x : v) t.words.push_back(std::bit_cast<std::uint64_t>(x));
        return t;
    }
    static Tensor f32(std::vector<std::uint32_t> dims, const std::vector<float>& v) {
        Tensor t{DType::F32, std::move(dims), {}};
        if (t.count() != v.size()) throw DomainError("tensor: value count does not match dims");
        for (float x : v) t.words.push_back(std::bit_cast<std::uint32_t>(x));
        return t;
    }
    static Tensor c128(std::vector<std::uint32_t> dims, const std::vector<cdouble>& v) {
        Tensor t{DType::C128, std::move(dims), {}};
        if (t.count() != v.size()) throw DomainError("tensor: value count does not match dims");
        for (const auto& z : v) {
            t.words.push_back(std::bit_cast<std::uint64_t>(z.real()));
            t.words.push_back(std::bit_cast<std::uint64_t>(z.imag()));
        }
        return t;
    }
    static Tensor c64(std::vector<std::uint32_t> dims, const std::vector<std::complex<float>>& v) {
        Tensor t{DType::C64, std::move(dims), {}};
        if (t.count() != v.size()) throw DomainError("tensor: value count does not match dims");
        for (const auto& z : v) {
            t.words.push_back(std::bit_cast<std::uint32_t>(z.real()));
            t.words.push_back(std::bit_cast<std::uint32_t>(z.imag()));
        }
        return t;
    }

    std::vector<double> as_f64() const {
        require(DType::F64);
        std::vector<double> out;
        out.reserve(words.size());
        for (auto w : words) out.push_back(std::bit_cast<double>(w));
        return out;
    }
    std::vector<float> as_f32() const {
        require(DType::F32);
        std::vector<float> out;
        for (auto w : words) out.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(w)));
        return out;
    }
    std::vector<cdouble> as_c128() const {
        require(DType::C128);
        std::vector<cdouble> out;
        out.reserve(words.size() / 2);
        for (std::size_t i = 0; i + 1 < words.size(); i += 2)
            out.emplace_back(std::bit_cast<double>(words[i]), std::bit_cast<double>(words[i + 1]));
        return out;
    }
    std::vector<std::complex<float>> as_c64() const {
        require(DType::C64);
        std::vector<std::complex<float>> out;
        for (std::size_t i = 0; i + 1 < words.size(); i += 2)
            out.emplace_back(std::bit_cast<float>(static_cast<std::uint32_t>(words[i])),
                             std::bit_cast<float>(static_cast<std::uint32_t>(words[i + 1])));
        return out;
    }

    /// Throws DataError unless the shape is exactly `expect`.
    void require_dims(const std::vector<std::uint32_t>& expect, const std::string& what) const {
        if (dims != expect) throw DataError(what + ": unexpected tensor shape");
    }

    bool operator==(const Tensor&) const = default;

  private:
    void require(DType t) const {
        if (dtype != t)
            throw DataError(std::string("tensor holds ") + to_string(dtype) + ", expected " + to_string(t));
    }
};

inline std::string encode_tensor(const Tensor& t) {
    if (t.dims.size() > 255) throw DomainError("tensor rank exceeds 255");
    const std::size_t n = t.count() * t.components();
    if (t.words.size() != n) throw DomainError("tensor payload does not match dims");
    const std::size_t word = dtype_size(t.dtype) / t.components();
    std::string out = "HYT1";
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.dims.size()));
    for (auto d : t.dims) detail::put_le<std::uint32_t>(out, d);
    out.reserve(out.size() + n * word);
    for (auto w : t.words) {
        if (word == 4)
            detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
        else
            detail::put_le<std::uint64_t>(out, w);
    }
    return out;
}

inline Tensor decode_tensor(std::string_view bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 6 || bytes.substr(0, 4) != "HYT1") throw DataError("not a HYT1 tensor (bad magic)");
    if (p[4] > 3) throw DataError("HYT1: unknown dtype code " + std::to_string(p[4]));
    Tensor t;
    t.dtype = static_cast<DType>(p[4]);
    const std::size_t rank = p[5];
    if (bytes.size() < 6 + 4 * rank) throw DataError("HYT1: truncated header");
    for (std::size_t i = 0; i < rank; ++i) t.dims.push_back(detail::get_le<std::uint32_t>(p + 6 + 4 * i));
    const std::size_t elem = dtype_size(t.dtype);
    const std::size_t count = detail::checked_count(t.dims, elem);
    const std::size_t header = 6 + 4 * rank;
    if (bytes.size() - header != count * elem)
        throw DataError("HYT1: payload is " + std::to_string(bytes.size() - header) + " bytes, expected " +
                        std::to_string(count * elem));
    const std::size_t word = elem / t.components();
    const std::size_t n = count * t.components();
    t.words.resize(n);
    const unsigned char* q = p + header;
    for (std::size_t i = 0; i < n; ++i)
        t.words[i] = word == 4 ? detail::get_le<std::uint32_t>(q + 4 * i) : detail::get_le<std::uint64_t>(q + 8 * i);
    return t;
}

inline void write_tensor(const Tensor& t, const fs::path& path) { write_file_atomic(path, encode_tensor(t)); }

inline Tensor read_tensor(const fs::path& path) {
    try {
        return decode_tensor(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// Conversions for pipeline types.

inline Tensor to_tensor(const RawDataCube& raw) {
    return Tensor::c128(Tensor::to_dims({raw.nx(), raw.ny(), raw.nf()}), raw.data);
}

/// Cube samples for a known geometry and radar; the compensation flag is
/// not part of the file and must be supplied by the caller.
inline RawDataCube cube_from_tensor(const Tensor& t, const ScanGeometry& g, const RadarConfig& cfg, bool compensated) {
    RawDataCube raw(g, cfg);
    t.require_dims(Tensor::to_dims({raw.nx(), raw.ny(), raw.nf()}), "raw cube");
    raw.data = t.as_c128();
    if (!all_finite(raw.data)) throw DataError("raw cube: non-finite samples");
    raw.compensated = compensated;
    return raw;
}

inline Tensor to_tensor(const DepthStack& stack) {
    if (stack.slices.empty()) throw DomainError("empty depth stack");
    const auto& first = stack.slices.front().image;
    std::vector<double> v;
    for (const auto& s : stack.slices) v.insert(v.end(), s.image.pixels.begin(), s.image.pixels.end());
    return Tensor::f64(Tensor::to_dims({stack.size(), first.height, first.width}), v);
}

/// Slices come back with the given depths and extents.
inline DepthStack stack_from_tensor(const Tensor& t, const std::vector<double>& depths, const Extent& extent) {
    if (depths.empty() || t.dims.size() != 3 || t.dims[0] != depths.size())
        throw DataError("depth stack: unexpected tensor shape");
    const auto v = t.as_f64();
    DepthStack out;
    out.z_min = depths.front();
    out.z_max = depths.back();
    out.step = depths.size() > 1 ? depths[1] - depths[0] : 1.0;
    const std::size_t h = t.dims[1], w = t.dims[2];
    for (std::size_t s = 0; s < depths.size(); ++s) {
        SarSlice sl;
        sl.z0 = depths[s];
        sl.extent = extent;
        sl.image = Image(w, h);
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(s * w * h), w * h, sl.image.pixels.begin());
        out.slices.push_back(std::move(sl));
    }
    return out;
}

inline Tensor to_tensor(const RgbImage& rgb) {
    return Tensor::f64(Tensor::to_dims({3, rgb.height(), rgb.width()}), rgb.planes.data);
}

inline RgbImage rgb_from_tensor(const Tensor& t) {
    if (t.dims.size() != 3 || t.dims[0] != 3) throw DataError("rgb: expected a [3, H, W] tensor");
    RgbImage img(t.dims[2], t.dims[1]);
    img.planes.data = t.as_f64();
    return img;
}

// ---------------------------------------------------------------------------
// Netpbm images.

namespace detail {

// Reads the whitespace/comment separated header fields of a Netpbm file.
inline std::vector<unsigned long> pnm_header(std::string_view bytes, std::string_view magic, std::size_t& pos) {
    if (bytes.substr(0, 2) != magic) throw DataError("expected a " + std::string(magic) + " image");
    pos = 2;
    std::vector<unsigned long> fields;
    while (fields.size() < 3) {
        while (pos < bytes.size() && (std::isspace(static_cast<unsigned char>(bytes[pos])) || bytes[pos] == '#')) {
            if (bytes[pos] == '#')
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            else
                ++pos;
        }
        unsigned long v = 0;
        const auto res = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
        if (res.ec != std::errc{}) throw DataError("malformed image header");
        pos = static_cast<std::size_t>(res.ptr - bytes.data());
        fields.push_back(v);
    }
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw DataError("malformed image header");
    ++pos;
    if (fields[0] == 0 || fields[1] == 0 || fields[0] > 1u << 16 || fields[1] > 1u << 16)
        throw DataError("image dimensions out of range");
    return fields;
}

}  // namespace detail

/// 16-bit binary PGM (big-endian samples, as Netpbm requires). Values are
/// clamped to [0, 1] and scaled to 0..65535.
inline std::string encode_pgm(const Image& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n";
    for (double v : img.pixels) {
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * 65535.0));
        out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    return out;
}

inline Image decode_pgm(std::string_view bytes) {
    std::size_t pos = 0;
    const auto f = detail::pnm_header(bytes, "P5", pos);
    if (f[2] != 65535) throw DataError("PGM: expected maxval 65535");
    Image img(f[0], f[1]);
    if (bytes.size() - pos != 2 * img.pixels.size()) throw DataError("PGM: payload size mismatch");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = static_cast<double>((p[2 * i] << 8) | p[2 * i + 1]) / 65535.0;
    return img;
}

inline std::string encode_ppm(const RgbImage& rgb) {
    std::string out = "P6\n" + std::to_string(rgb.width()) + " " + std::to_string(rgb.height()) + "\n255\n";
    for (std::size_t y = 0; y < rgb.height(); ++y)
        for (std::size_t x = 0; x < rgb.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = rgb.at(c, y, x);
                out.push_back(static_cast<char>(std::lround(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * 255.0)));
            }
    return out;
}

inline RgbImage decode_ppm(std::string_view bytes) {
    std::size_t pos = 0;
    const auto f = detail::pnm_header(bytes, "P6", pos);
    if (f[2] != 255) throw DataError("PPM: expected maxval 255");
    RgbImage img(f[0], f[1]);
    if (bytes.size() - pos != 3 * f[0] * f[1]) throw DataError("PPM: payload size mismatch");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<double>(*p++) / 255.0;
    return img;
}

inline void write_pgm(const Image& img, const fs::path& path) { write_file_atomic(path, encode_pgm(img)); }
inline void write_ppm(const RgbImage& img, const fs::path& path) { write_file_atomic(path, encode_ppm(img)); }
inline Image read_pgm(const fs::path& path) { return decode_pgm(read_file(path)); }
inline RgbImage read_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }

// ---------------------------------------------------------------------------
// Number formatting: shortest text that parses back to the same double.

inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), res.ptr};
}

// ---------------------------------------------------------------------------
// Run configuration.

/// Raw `[section]` / `key = value` content, with source line numbers.
struct ConfigFile {
    struct Entry {
        std::string value;
        std::size_t line = 0;
    };
    std::map<std::string, std::map<std::string, Entry>> sections;
};

namespace detail {

// Pitch recovered from scan positions carries rounding from their
// construction; 12 significant digits gives back the value they were built
// from, so uniform() reproduces the same positions.
inline double nominal_pitch(double p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", p);
    return std::strtod(buf, nullptr);
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// `#` or `;` start a comment; keys before any header are an error; a key
/// may appear once per section.
inline ConfigFile parse_config_text(std::istream& in) {
    ConfigFile cf;
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const std::string where = "config line " + std::to_string(lineno) + ": ";
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(where + "unterminated section header");
            section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
            if (section.empty()) throw ConfigError(where + "empty section name");
            cf.sections[section];
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected `key = value`");
        if (section.empty()) throw ConfigError(where + "key outside any [section]");
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError(where + "empty key");
        auto& sec = cf.sections[section];
        if (sec.contains(key)) throw ConfigError(where + "duplicate key " + section + "." + key);
        sec[key] = {value, lineno};
    }
    return cf;
}

/// Everything a CLI run needs: data generation, model, optimizer,
/// augmentation and camera calibration.
struct RunConfig {
    DatasetConfig dataset;
    std::size_t samples = 200;
    std::uint64_t data_seed = 42;
    std::optional<fs::path> scene_file;
    TrainHyper hyper;
    std::size_t folds = 5;
    std::size_t repeats = 3;
    std::uint64_t cv_seed = 7;

    void validate() const {
        dataset.geometry.validate();
        hyper.validate();
        if (samples < 2 || samples % 2 != 0) throw ConfigError("scene.samples must be even and >= 2");
        if (!(dataset.z_min > 0.0) || !(dataset.z_step > 0.0) || dataset.z_max < dataset.z_min)
            throw ConfigError("scene: need 0 < z_min <= z_max and z_step > 0");
        if (folds < 2) throw ConfigError("training.folds must be >= 2");
        if (repeats < 1) throw ConfigError("training.repeats must be >= 1");
        if (scene_file && !fs::is_regular_file(*scene_file))
            throw ConfigError("scene.file does not exist: " + scene_file->string());
    }
};

namespace detail {

class ConfigReader {
  public:
    explicit ConfigReader(const ConfigFile& cf) : cf_(cf) {}

    template <class T, class Fn>
    void bind(const std::string& section, const std::string& key, Fn&& set) {
        known_[section].push_back(key);
        const auto s = cf_.sections.find(section);
        if (s == cf_.sections.end()) return;
        const auto e = s->second.find(key);
        if (e == s->second.end()) return;
        set(parse<T>(section + "." + key, e->second));
    }

    void check_unknown() const {
        for (const auto& [section, keys] : cf_.sections) {
            const auto k = known_.find(section);
            if (k == known_.end()) throw ConfigError("config: unknown section [" + section + "]");
            for (const auto& [key, entry] : keys)
                if (std::find(k->second.begin(), k->second.end(), key) == k->second.end())
                    throw ConfigError("config line " + std::to_string(entry.line) + ": unknown key " + section + "." +
                                      key);
        }
    }

  private:
    template <class T>
    static T parse(const std::string& name, const ConfigFile::Entry& e) {
        const std::string& v = e.value;
        const std::string where = "config line " + std::to_string(e.line) + ": " + name;
        if constexpr (std::is_same_v<T, std::string>) {
            if (v.empty()) throw ConfigError(where + " is empty");
            return v;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw ConfigError(where + " must be true or false");
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            std::vector<std::size_t> out;
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) out.push_back(parse<std::size_t>(name, {trim(item), e.line}));
            if (out.empty()) throw ConfigError(where + " is empty");
            return out;
        } else {
            T out{};
            const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
            if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
                throw ConfigError(where + ": cannot parse '" + v + "'");
            if constexpr (std::is_floating_point_v<T>)
                if (!std::isfinite(out)) throw ConfigError(where + " must be finite");
            return out;
        }
    }

    const ConfigFile& cf_;
    std::map<std::string, std::vector<std::string>> known_;
};

}  // namespace detail

/// Missing keys keep the library defaults; unknown sections or keys are
/// errors. Relative file references resolve against `base_dir`.
inline RunConfig parse_run_config(const ConfigFile& cf, const fs::path& base_dir = {}) {
    RunConfig rc;
    auto& d = rc.dataset;
    auto& h = rc.hyper;
    detail::ConfigReader r(cf);

    double f0 = d.radar.f0(), bw = d.radar.bandwidth(), chirp = d.radar.chirp_T();
    int nf = d.radar.n_freq();
    r.bind<double>("radar", "f0_hz", [&](double v) { f0 = v; });
    r.bind<double>("radar", "bandwidth_hz", [&](double v) { bw = v; });
    r.bind<double>("radar", "chirp_s", [&](double v) { chirp = v; });
    r.bind<int>("radar", "n_freq", [&](int v) { nf = v; });

    std::size_t nx = d.geometry.nx(), ny = d.geometry.ny();
    double px = detail::nominal_pitch(d.geometry.pitch_x()), py = detail::nominal_pitch(d.geometry.pitch_y());
    r.bind<std::size_t>("geometry", "nx", [&](std::size_t v) { nx = v; });
    r.bind<std::size_t>("geometry", "ny", [&](std::size_t v) { ny = v; });
    r.bind<double>("geometry", "pitch_x", [&](double v) { px = v; });
    r.bind<double>("geometry", "pitch_y", [&](double v) { py = v; });
    double delta = d.geometry.delta_T, z0 = d.geometry.Z0, ref = d.geometry.reference_depth;
    r.bind<double>("geometry", "delta_t", [&](double v) { delta = v; });
    r.bind<double>("geometry", "z0", [&](double v) { z0 = v; });
    r.bind<double>("geometry", "reference_depth", [&](double v) { ref = v; });

    auto& p = d.plant;
    r.bind<std::string>("scene", "file", [&](const std::string& v) { rc.scene_file = base_dir / v; });
    r.bind<std::size_t>("scene", "samples", [&](std::size_t v) { rc.samples = v; });
    r.bind<std::uint64_t>("scene", "seed", [&](std::uint64_t v) { rc.data_seed = v; });
    r.bind<double>("scene", "z_min", [&](double v) { d.z_min = v; });
    r.bind<double>("scene", "z_max", [&](double v) { d.z_max = v; });
    r.bind<double>("scene", "z_step", [&](double v) { d.z_step = v; });
    r.bind<int>("scene", "leaves_min", [&](int v) { p.leaves_min = v; });
    r.bind<int>("scene", "leaves_max", [&](int v) { p.leaves_max = v; });
    r.bind<double>("scene", "scatterer_density", [&](double v) { p.scatterer_density = v; });
    r.bind<int>("scene", "scatterers_min", [&](int v) { p.scatterers_min = v; });
    r.bind<int>("scene", "scatterers_max", [&](int v) { p.scatterers_max = v; });
    r.bind<double>("scene", "depth_min", [&](double v) { p.depth_min = v; });
    r.bind<double>("scene", "depth_max", [&](double v) { p.depth_max = v; });
    r.bind<bool>("scene", "coherent_leaves", [&](bool v) { p.coherent_leaves = v; });
    r.bind<double>("scene", "fov_x", [&](double v) { p.fov_x = v; });
    r.bind<double>("scene", "fov_y", [&](double v) { p.fov_y = v; });
    r.bind<double>("scene", "pot_depth", [&](double v) { p.pot_depth = v; });
    r.bind<double>("scene", "pot_y", [&](double v) { p.pot_y = v; });
    r.bind<double>("scene", "pot_half_width", [&](double v) { p.pot_half_width = v; });
    r.bind<double>("scene", "dry_lo", [&](double v) { p.bands.dry_lo = v; });
    r.bind<double>("scene", "dry_hi", [&](double v) { p.bands.dry_hi = v; });
    r.bind<double>("scene", "wet_lo", [&](double v) { p.bands.wet_lo = v; });
    r.bind<double>("scene", "wet_hi", [&](double v) { p.bands.wet_hi = v; });
    r.bind<double>("scene", "droplet_density", [&](double v) { d.camera.droplet_density = v; });
    r.bind<double>("scene", "camera_noise", [&](double v) { d.camera.noise = v; });

    auto& m = h.model;
    r.bind<std::vector<std::size_t>>("model", "conv_channels", [&](std::vector<std::size_t> v) { m.conv_channels = std::move(v); });
    r.bind<std::size_t>("model", "n_heads", [&](std::size_t v) { m.n_heads = v; });
    r.bind<std::size_t>("model", "n_layers", [&](std::size_t v) { m.n_layers = v; });
    r.bind<bool>("model", "ffn", [&](bool v) { m.ffn = v; });
    r.bind<std::size_t>("model", "ffn_hidden", [&](std::size_t v) { m.ffn_hidden = v; });
    r.bind<std::string>("model", "modality", [&](const std::string& v) { m.modality = parse_modality(v); });

    r.bind<double>("training", "pretrain_lr", [&](double v) { h.pretrain_lr = v; });
    r.bind<double>("training", "lr", [&](double v) { h.lr = v; });
    r.bind<double>("training", "momentum", [&](double v) { h.momentum = v; });
    r.bind<double>("training", "alpha_lr_scale", [&](double v) { h.alpha_lr_scale = v; });
    r.bind<std::size_t>("training", "phase1_epochs", [&](std::size_t v) { h.phase1_epochs = v; });
    r.bind<std::size_t>("training", "phase2_epochs", [&](std::size_t v) { h.phase2_epochs = v; });
    r.bind<std::size_t>("training", "batch_size", [&](std::size_t v) { h.batch_size = v; });
    r.bind<double>("training", "clip_norm", [&](double v) { h.clip_norm = v; });
    r.bind<bool>("training", "cosine_decay", [&](bool v) { h.cosine_decay = v; });
    r.bind<std::size_t>("training", "warmup_epochs", [&](std::size_t v) { h.warmup_epochs = v; });
    r.bind<std::uint64_t>("training", "seed", [&](std::uint64_t v) { h.seed = v; });
    r.bind<unsigned>("training", "threads", [&](unsigned v) { h.threads = v; d.threads = v; });
    r.bind<std::size_t>("training", "folds", [&](std::size_t v) { rc.folds = v; });
    r.bind<std::size_t>("training", "repeats", [&](std::size_t v) { rc.repeats = v; });
    r.bind<std::uint64_t>("training", "cv_seed", [&](std::uint64_t v) { rc.cv_seed = v; });

    auto& a = h.augment;
    r.bind<double>("augmentation", "rgb_dropout", [&](double v) { a.rgb_dropout = v; });
    r.bind<double>("augmentation", "lighting_min", [&](double v) { a.lighting_min = v; });
    r.bind<double>("augmentation", "lighting_max", [&](double v) { a.lighting_max = v; });
    r.bind<double>("augmentation", "wind_max_mm", [&](double v) { a.wind_max_mm = v; });
    r.bind<double>("augmentation", "wind_prob", [&](double v) { a.wind_prob = v; });

    auto& cam = d.camera;
    r.bind<std::size_t>("calibration", "margin_left", [&](std::size_t v) { cam.margin_left = v; });
    r.bind<std::size_t>("calibration", "margin_top", [&](std::size_t v) { cam.margin_top = v; });
    r.bind<std::size_t>("calibration", "margin_right", [&](std::size_t v) { cam.margin_right = v; });
    r.bind<std::size_t>("calibration", "margin_bottom", [&](std::size_t v) { cam.margin_bottom = v; });

    r.check_unknown();
    if (nf < 2) throw ConfigError("radar.n_freq must be >= 2");
    d.radar = RadarConfig(f0, bw, chirp, nf);
    if (nx == 0 || ny == 0 || !(px > 0.0) || !(py > 0.0)) throw ConfigError("geometry: need nx, ny >= 1 and positive pitch");
    d.geometry = ScanGeometry::uniform(nx, ny, px, py);
    d.geometry.delta_T = delta;
    d.geometry.Z0 = z0;
    d.geometry.reference_depth = ref;
    rc.validate();
    return rc;
}

inline RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_run_config(parse_config_text(in), path.parent_path());
}

/// Inverse of parse_run_config (scene.file is written as given).
inline std::string format_run_config(const RunConfig& rc) {
    const auto& d = rc.dataset;
    const auto& h = rc.hyper;
    const auto& p = d.plant;
    std::ostringstream o;
    auto kv = [&](const char* k, const std::string& v) { o << k << " = " << v << '\n'; };
    auto num = [&](const char* k, double v) { kv(k, format_double(v)); };
    auto u = [&](const char* k, std::uint64_t v) { kv(k, std::to_string(v)); };
    auto b = [&](const char* k, bool v) { kv(k, v ? "true" : "false"); };
    o << "[radar]\n";
    num("f0_hz", d.radar.f0());
    num("bandwidth_hz", d.radar.bandwidth());
    num("chirp_s", d.radar.chirp_T());
    u("n_freq", static_cast<std::uint64_t>(d.radar.n_freq()));
    o << "\n[geometry]\n";
    u("nx", d.geometry.nx());
    u("ny", d.geometry.ny());
    num("pitch_x", detail::nominal_pitch(d.geometry.pitch_x()));
    num("pitch_y", detail::nominal_pitch(d.geometry.pitch_y()));
    num("delta_t", d.geometry.delta_T);
    num("z0", d.geometry.Z0);
    num("reference_depth", d.geometry.reference_depth);
    o << "\n[scene]\n";
    if (rc.scene_file) kv("file", rc.scene_file->generic_string());
    u("samples", rc.samples);
    u("seed", rc.data_seed);
    num("z_min", d.z_min);
    num("z_max", d.z_max);
    num("z_step", d.z_step);
    u("leaves_min", static_cast<std::uint64_t>(p.leaves_min));
    u("leaves_max", static_cast<std::uint64_t>(p.leaves_max));
    num("scatterer_density", p.scatterer_density);
    u("scatterers_min", static_cast<std::uint64_t>(p.scatterers_min));
    u("scatterers_max", static_cast<std::uint64_t>(p.scatterers_max));
    num("depth_min", p.depth_min);
    num("depth_max", p.depth_max);
    b("coherent_leaves", p.coherent_leaves);
    num("fov_x", p.fov_x);
    num("fov_y", p.fov_y);
    num("pot_depth", p.pot_depth);
    num("pot_y", p.pot_y);
    num("pot_half_width", p.pot_half_width);
    num("dry_lo", p.bands.dry_lo);
    num("dry_hi", p.bands.dry_hi);
    num("wet_lo", p.bands.wet_lo);
    num("wet_hi", p.bands.wet_hi);
    num("droplet_density", d.camera.droplet_density);
    num("camera_noise", d.camera.noise);
    o << "\n[model]\n";
    std::string ch;
    for (std::size_t i = 0; i < h.model.conv_channels.size(); ++i)
        ch += (i ? "," : "") + std::to_string(h.model.conv_channels[i]);
    kv("conv_channels", ch);
    u("n_heads", h.model.n_heads);
    u("n_layers", h.model.n_layers);
    b("ffn", h.model.ffn);
    u("ffn_hidden", h.model.ffn_hidden);
    kv("modality", to_string(h.model.modality));
    o << "\n[training]\n";
    num("pretrain_lr", h.pretrain_lr);
    num("lr", h.lr);
    num("momentum", h.momentum);
    num("alpha_lr_scale", h.alpha_lr_scale);
    u("phase1_epochs", h.phase1_epochs);
    u("phase2_epochs", h.phase2_epochs);
    u("batch_size", h.batch_size);
    num("clip_norm", h.clip_norm);
    b("cosine_decay", h.cosine_decay);
    u("warmup_epochs", h.warmup_epochs);
    u("seed", h.seed);
    u("threads", h.threads);
    u("folds", rc.folds);
    u("repeats", rc.repeats);
    u("cv_seed", rc.cv_seed);
    o << "\n[augmentation]\n";
    num("rgb_dropout", h.augment.rgb_dropout);
    num("lighting_min", h.augment.lighting_min);
    num("lighting_max", h.augment.lighting_max);
    num("wind_max_mm", h.augment.wind_max_mm);
    num("wind_prob", h.augment.wind_prob);
    o << "\n[calibration]\n";
    u("margin_left", d.camera.margin_left);
    u("margin_top", d.camera.margin_top);
    u("margin_right", d.camera.margin_right);
    u("margin_bottom", d.camera.margin_bottom);
    return o.str();
}

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding config.cfg (the run configuration the
// model was trained with), params.hyt (all parameters, f64 [P], in the
// storage order of ModelParams::tensors()) and manifest.csv naming each
// tensor's offset and shape within params.hyt.

struct Checkpoint {
    RunConfig config;
    ModelParams params;
};

/// `name,offset,shape` with the shape written as `4x8x3x3`.
inline std::string param_manifest(const ModelParams& params) {
    std::string out = "name,offset,shape\n";
    for (const auto& t : params.tensors()) {
        std::string shape;
        for (std::size_t i = 0; i < t.shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(t.shape[i]);
        out += t.name + "," + std::to_string(t.offset) + "," + shape + "\n";
    }
    return out;
}

inline void save_checkpoint(const fs::path& dir, const RunConfig& rc, const ModelParams& params) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create checkpoint directory " + dir.string());
    write_tensor(Tensor::f64(Tensor::to_dims({params.size()}), params.values), dir / "params.hyt");
    write_file_atomic(dir / "manifest.csv", param_manifest(params));
    RunConfig copy = rc;
    copy.scene_file.reset();
    write_file_atomic(dir / "config.cfg", format_run_config(copy));
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("checkpoint directory not found: " + dir.string());
    Checkpoint ck{load_run_config(dir / "config.cfg"), {}};
    ck.params = ModelParams(ck.config.hyper.model);
    if (read_file(dir / "manifest.csv") != param_manifest(ck.params))
        throw DataError("checkpoint manifest does not match the configured model");
    const Tensor t = read_tensor(dir / "params.hyt");
    t.require_dims(Tensor::to_dims({ck.params.size()}), "checkpoint parameters");
    ck.params.values = t.as_f64();
    if (!ck.params.finite()) throw NumericError("checkpoint holds non-finite parameters");
    return ck;
}

// ---------------------------------------------------------------------------
// Dataset directories: config.cfg, index.csv (`index,label,scene_seed`) and
// per sample NNNN.raw.hyt (compensated cube, c128), NNNN.stack.hyt
// (normalized slices, f64 [S, H, W]), NNNN.rgb.hyt (aligned camera image,
// f64 [3, H, W]) and NNNN.camera.ppm (full camera frame, for viewing and
// for `fuse`).

inline std::string sample_stem(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

/// Full (uncropped) camera frame of a synthetic sample.
inline RgbImage camera_frame(const Sample& s, const DatasetConfig& cfg) {
    const Plant plant = make_plant(s.label, derive_seed(s.meta.scene_seed, 0), cfg.plant);
    return render_camera(plant, cfg, derive_seed(s.meta.scene_seed, 1));
}

inline void save_dataset(const fs::path& dir, const RunConfig& rc, const std::vector<Sample>& data) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create dataset directory " + dir.string());
    std::string index = "index,label,scene_seed\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        const std::string stem = sample_stem(i);
        write_tensor(to_tensor(s.raw), dir / (stem + ".raw.hyt"));
        write_tensor(to_tensor(s.stack), dir / (stem + ".stack.hyt"));
        write_tensor(to_tensor(s.rgb), dir / (stem + ".rgb.hyt"));
        write_ppm(camera_frame(s, rc.dataset), dir / (stem + ".camera.ppm"));
        index += std::to_string(i) + "," + to_string(s.label) + "," + std::to_string(s.meta.scene_seed) + "\n";
    }
    RunConfig copy = rc;
    copy.samples = data.size();
    copy.scene_file.reset();
    write_file_atomic(dir / "config.cfg", format_run_config(copy));
    write_file_atomic(dir / "index.csv", index);
}

struct LoadedDataset {
    RunConfig config;
    std::vector<Sample> samples;
};

inline LoadedDataset load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
    LoadedDataset out{load_run_config(dir / "config.cfg"), {}};
    const auto& cfg = out.config.dataset;
    const auto depths = cfg.depths();
    const auto grid = PixelGrid::for_geometry(cfg.geometry);
    std::istringstream index(read_file(dir / "index.csv"));
    std::string line;
    if (!std::getline(index, line) || detail::trim(line) != "index,label,scene_seed")
        throw DataError("index.csv: bad header");
    while (std::getline(index, line)) {
        if (detail::trim(line).empty()) continue;
        std::istringstream ls(line);
        std::string idx, label, seed;
        if (!std::getline(ls, idx, ',') || !std::getline(ls, label, ',') || !std::getline(ls, seed))
            throw DataError("index.csv: malformed row '" + line + "'");
        if (idx != std::to_string(out.samples.size())) throw DataError("index.csv: rows out of order");
        Sample s;
        if (label == "dry")
            s.label = Wetness::Dry;
        else if (label == "wet")
            s.label = Wetness::Wet;
        else
            throw DataError("index.csv: unknown label '" + label + "'");
        try {
            s.meta.scene_seed = std::stoull(seed);
        } catch (const std::exception&) {
            throw DataError("index.csv: bad seed '" + seed + "'");
        }
        const std::string stem = sample_stem(out.samples.size());
        s.raw = cube_from_tensor(read_tensor(dir / (stem + ".raw.hyt")), cfg.geometry, cfg.radar, true);
        s.stack = stack_from_tensor(read_tensor(dir / (stem + ".stack.hyt")), depths, grid.extent());
        s.rgb = rgb_from_tensor(read_tensor(dir / (stem + ".rgb.hyt")));
        if (s.rgb.width() != grid.width || s.rgb.height() != grid.height ||
            s.stack.slices.front().image.width != grid.width || s.stack.slices.front().image.height != grid.height)
            throw DataError(stem + ": raster does not match the dataset geometry");
        out.samples.push_back(std::move(s));
    }
    if (out.samples.empty()) throw DataError("dataset is empty: " + dir.string());
    return out;
}

// ---------------------------------------------------------------------------
// Metrics.

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "phase,epoch,loss,accuracy\n";
    for (const auto& e : history)
        out += std::to_string(e.phase) + "," + std::to_string(e.epoch) + "," + format_double(e.loss) + "," +
               format_double(e.accuracy) + "\n";
    return out;
}

inline std::string metrics_csv_header() { return "repeat,fold,n,tp,tn,fp,fn,accuracy\n"; }

inline std::string metrics_csv_row(std::size_t repeat, std::size_t fold, const Metrics& m) {
    return std::to_string(repeat) + "," + std::to_string(fold) + "," + std::to_string(m.total()) + "," +
           std::to_string(m.tp) + "," + std::to_string(m.tn) + "," + std::to_string(m.fp) + "," +
           std::to_string(m.fn) + "," + format_double(m.accuracy) + "\n";
}

/// One-line JSON object.
inline std::string summary_json(const Aggregate& a, const std::string& modality, std::size_t k, std::size_t repeats) {
    return "{\"metric\":\"accuracy\",\"mean\":" + format_double(a.mean) + ",\"std\":" + format_double(a.stddev) +
           ",\"runs\":" + std::to_string(a.count) + ",\"folds\":" + std::to_string(k) + ",\"repeats\":" +
           std::to_string(repeats) + ",\"modality\":\"" + modality + "\"}";
}

/// Re-reads accuracies from a metrics CSV written by metrics_csv_row.
inline std::vector<double> read_metrics_accuracy(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line + "\n" != metrics_csv_header()) throw DataError("metrics CSV: bad header");
    std::vector<double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        double v = 0.0;
        const auto res = std::from_chars(line.data() + comma + 1, line.data() + line.size(), v);
        if (comma == std::string::npos || res.ec != std::errc{}) throw DataError("metrics CSV: bad row");
        out.push_back(v);
    }
    return out;
}

}  // namespace hydra
