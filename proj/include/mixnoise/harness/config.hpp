#pragma once

#include "../appendix.hpp"
#include "../consistency.hpp"
#include "../errors.hpp"
#include "../forward.hpp"
#include "../map_estimation.hpp"
#include "../noise.hpp"
#include "../potential.hpp"
#include "../prior.hpp"
#include "../rng.hpp"
#include "../sampling.hpp"
#include "../types.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mixnoise::harness {

using Json = nlohmann::json;

inline constexpr const char* version = "0.1.0";

/// Invalid configuration; carries every problem found, one per entry.
class ConfigError : public Error {
  public:
    explicit ConfigError(std::vector<std::string> errors)
        : Error(join(errors)), errors_(std::move(errors))
    {
    }

    [[nodiscard]] const std::vector<std::string>& errors() const noexcept { return errors_; }

  private:
    static std::string join(const std::vector<std::string>& errors)
    {
        std::string out = "invalid configuration:";
        for (const auto& e : errors) {
            out += "\n  " + e;
        }
        return out;
    }

    std::vector<std::string> errors_;
};

struct NoiseConfig {
    std::string kind; // mixed-gaussian | gamma | lognormal | mixed-quadrature
    std::optional<MixedGaussianNoise> mixed;
    double alpha = 0.0;
    double sigma2 = 0.0;
    Vector var_a; // diagonal variances for mixed-quadrature
    Vector var_m;
    int nodes = 40;
};

struct MapExperiment {
    int prior_starts = 8;
    bool include_truth = true;
    bool include_zero = true;
    MinimizeOptions minimize;
};

struct SampleExperiment {
    int n_samples = 10000;
    std::optional<double> beta; // tuned when absent
    std::optional<int> burn_in;
    bool start_at_truth = false;
};

struct HellingerExperiment {
    long n_prior_samples = 100000;
    int batches = 20;
    std::optional<Vector> y_prime;
    std::optional<Vector> direction;
    std::vector<double> deltas;
};

struct ExperimentConfig {
    std::string source_path;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string seed_source = "default"; // config | default | cli
    std::optional<std::string> output_dir;

    std::optional<GaussianPrior> prior;
    std::optional<ForwardMap> forward;
    std::optional<NoiseConfig> noise;
    std::optional<DataVector> data;
    std::string data_source = "none"; // inline | file | synthesized | none
    std::optional<TruthSpec> truth;

    std::string experiment;
    MapExperiment map;
    SampleExperiment sample;
    HellingerExperiment hellinger;
    SmallNoiseOptions small_noise;
    LargeDataOptions large_data;
    AppendixOptions appendix;
};

inline const std::vector<std::string>& experiment_names()
{
    static const std::vector<std::string> names{"map", "sample", "hellinger", "small-noise", "large-data",
                                                "verify-appendix"};
    return names;
}

namespace detail {

inline std::uint64_t hash_bytes(const std::string& s) { return mixnoise::fnv1a64(s); }

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte)
{
    std::size_t line = 1;
    std::size_t col = 1;
    const std::size_t end = std::min(byte, text.size());
    for (std::size_t i = 0; i + 1 < end; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

// Typed access to a JSON object that records problems instead of throwing.
class Reader {
  public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    void error(const std::string& path, const std::string& msg) { errors_.push_back(path + ": " + msg); }

    [[nodiscard]] bool ok() const { return errors_.empty(); }
    [[nodiscard]] std::size_t count() const { return errors_.size(); }

    bool object(const Json& j, const std::string& path)
    {
        if (!j.is_object()) {
            error(path, "expected an object");
            return false;
        }
        return true;
    }

    void allow_keys(const Json& j, const std::string& path, std::initializer_list<const char*> keys)
    {
        if (!j.is_object()) {
            return;
        }
        std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& [k, v] : j.items()) {
            if (allowed.count(k) == 0) {
                error(join(path, k), "unknown key");
            }
        }
    }

    std::optional<double> number(const Json& j, const std::string& key, const std::string& path)
    {
        if (!j.contains(key)) {
            return std::nullopt;
        }
        const Json& v = j.at(key);
        if (!v.is_number()) {
            error(join(path, key), "expected a number");
            return std::nullopt;
        }
        return v.get<double>();
    }

    double number_or(const Json& j, const std::string& key, const std::string& path, double fallback)
    {
        return number(j, key, path).value_or(fallback);
    }

    std::optional<long long> integer(const Json& j, const std::string& key, const std::string& path)
    {
        if (!j.contains(key)) {
            return std::nullopt;
        }
        const Json& v = j.at(key);
        if (!v.is_number_integer()) {
            error(join(path, key), "expected an integer");
            return std::nullopt;
        }
        return v.get<long long>();
    }

    long long integer_or(const Json& j, const std::string& key, const std::string& path, long long fallback,
                         long long min_value)
    {
        const auto v = integer(j, key, path);
        if (v && *v < min_value) {
            error(join(path, key), "must be >= " + std::to_string(min_value));
            return fallback;
        }
        return v.value_or(fallback);
    }

    bool boolean_or(const Json& j, const std::string& key, const std::string& path, bool fallback)
    {
        if (!j.contains(key)) {
            return fallback;
        }
        if (!j.at(key).is_boolean()) {
            error(join(path, key), "expected true or false");
            return fallback;
        }
        return j.at(key).get<bool>();
    }

    std::optional<std::string> string(const Json& j, const std::string& key, const std::string& path)
    {
        if (!j.contains(key)) {
            return std::nullopt;
        }
        if (!j.at(key).is_string()) {
            error(join(path, key), "expected a string");
            return std::nullopt;
        }
        return j.at(key).get<std::string>();
    }

    std::optional<Vector> vector(const Json& v, const std::string& path)
    {
        if (!v.is_array()) {
            error(path, "expected a list of numbers");
            return std::nullopt;
        }
        Vector out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) {
                error(path + "[" + std::to_string(i) + "]", "expected a number");
                return std::nullopt;
            }
            out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
        }
        return out;
    }

    std::optional<Vector> vector(const Json& j, const std::string& key, const std::string& path)
    {
        if (!j.contains(key)) {
            return std::nullopt;
        }
        return vector(j.at(key), join(path, key));
    }

    std::optional<Matrix> matrix(const Json& v, const std::string& path)
    {
        if (!v.is_array() || v.empty() || !v[0].is_array()) {
            error(path, "expected a list of rows");
            return std::nullopt;
        }
        const std::size_t cols = v[0].size();
        Matrix out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t r = 0; r < v.size(); ++r) {
            const auto row = vector(v[r], path + "[" + std::to_string(r) + "]");
            if (!row) {
                return std::nullopt;
            }
            if (static_cast<std::size_t>(row->size()) != cols) {
                error(path, "rows have different lengths");
                return std::nullopt;
            }
            out.row(static_cast<Eigen::Index>(r)) = row->transpose();
        }
        return out;
    }

    static std::string join(const std::string& path, const std::string& key)
    {
        return path.empty() ? key : path + "." + key;
    }

  private:
    std::vector<std::string>& errors_;
};

// Covariance given as a scalar (times I), a diagonal list or a dense matrix.
inline std::optional<Matrix> covariance(Reader& rd, const Json& j, const std::string& key, const std::string& path,
                                        Eigen::Index dim)
{
    const std::string p = Reader::join(path, key);
    if (!j.contains(key)) {
        rd.error(p, "missing");
        return std::nullopt;
    }
    const Json& v = j.at(key);
    Matrix m;
    if (v.is_number()) {
        m = v.get<double>() * Matrix::Identity(dim, dim);
    } else if (v.is_array() && !v.empty() && v[0].is_array()) {
        auto mm = rd.matrix(v, p);
        if (!mm) {
            return std::nullopt;
        }
        m = std::move(*mm);
    } else {
        auto d = rd.vector(v, p);
        if (!d) {
            return std::nullopt;
        }
        m = d->asDiagonal();
    }
    if (m.rows() != dim || m.cols() != dim) {
        rd.error(p, "expected size " + std::to_string(dim) + "x" + std::to_string(dim) + ", got "
                        + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        return std::nullopt;
    }
    if (!m.allFinite()) {
        rd.error(p, "entries must be finite");
        return std::nullopt;
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        rd.error(p, "matrix is not symmetric");
        return std::nullopt;
    }
    return m;
}

inline std::optional<Vector> diagonal_variances(Reader& rd, const Json& j, const std::string& key,
                                                const std::string& path, Eigen::Index dim)
{
    auto m = covariance(rd, j, key, path, dim);
    if (!m) {
        return std::nullopt;
    }
    if (!m->isDiagonal(0.0)) {
        rd.error(Reader::join(path, key), "must be diagonal for this noise kind");
        return std::nullopt;
    }
    Vector d = m->diagonal();
    if (!(d.array() > 0.0).all()) {
        rd.error(Reader::join(path, key), "variances must be positive");
        return std::nullopt;
    }
    return d;
}

inline std::optional<GaussianPrior> parse_prior(Reader& rd, const Json& j)
{
    const std::string path = "prior";
    if (!rd.object(j, path)) {
        return std::nullopt;
    }
    rd.allow_keys(j, path, {"n", "tau", "s", "eigenvalues"});
    try {
        if (j.contains("eigenvalues")) {
            if (j.contains("n") || j.contains("tau") || j.contains("s")) {
                rd.error(path, "give either eigenvalues or (n, tau, s), not both");
                return std::nullopt;
            }
            auto ev = rd.vector(j, "eigenvalues", path);
            if (!ev) {
                return std::nullopt;
            }
            return GaussianPrior{*ev};
        }
        const auto n = rd.integer(j, "n", path);
        if (!n) {
            if (!j.contains("n")) {
                rd.error("prior.n", "missing");
            }
            return std::nullopt;
        }
        if (*n < 1) {
            rd.error("prior.n", "must be >= 1");
            return std::nullopt;
        }
        const double tau = rd.number_or(j, "tau", path, 1.0);
        const double s = rd.number_or(j, "s", path, 1.0);
        if (!(s > 0.0)) {
            rd.error("prior.s", "must be positive");
            return std::nullopt;
        }
        return GaussianPrior::matern(*n, tau, s);
    } catch (const Error& e) {
        rd.error(path, e.what());
        return std::nullopt;
    }
}

inline std::optional<ForwardMap> parse_forward(Reader& rd, const Json& j, std::optional<Eigen::Index> n_dim,
                                               std::uint64_t seed)
{
    const std::string path = "forward";
    if (!rd.object(j, path)) {
        return std::nullopt;
    }
    rd.allow_keys(j, path, {"kind", "A", "b", "J", "eps", "radius", "grid", "source"});
    const auto kind = rd.string(j, "kind", path);
    if (!kind) {
        if (!j.contains("kind")) {
            rd.error("forward.kind", "missing");
        }
        return std::nullopt;
    }
    const auto j_dim = rd.integer(j, "J", path);
    if (j_dim && *j_dim < 1) {
        rd.error("forward.J", "must be >= 1");
        return std::nullopt;
    }

    try {
        if (*kind == "elliptic-1d") {
            if (!n_dim) {
                rd.error(path, "needs a valid prior to fix the number of coefficients");
                return std::nullopt;
            }
            const long long grid = rd.integer_or(j, "grid", path, 127, 2);
            return ForwardMap::elliptic_1d(*n_dim, grid, j_dim.value_or(7), rd.number_or(j, "source", path, 1.0));
        }
        if (*kind == "identity") {
            if (!n_dim) {
                rd.error(path, "needs a valid prior to fix the dimension");
                return std::nullopt;
            }
            return ForwardMap::linear(Matrix::Identity(*n_dim, *n_dim));
        }
        if (*kind != "linear" && *kind != "exp-affine") {
            rd.error("forward.kind", "unknown kind '" + *kind + "' (linear, identity, exp-affine, elliptic-1d)");
            return std::nullopt;
        }

        // Matrix A: dense rows or {"random": {"scale": s}}.
        Matrix a;
        if (!j.contains("A")) {
            rd.error("forward.A", "missing");
            return std::nullopt;
        }
        const Json& aj = j.at("A");
        if (aj.is_object()) {
            rd.allow_keys(aj, "forward.A", {"random"});
            if (!aj.contains("random") || !aj.at("random").is_object()) {
                rd.error("forward.A", "expected a matrix or {\"random\": {\"scale\": s}}");
                return std::nullopt;
            }
            rd.allow_keys(aj.at("random"), "forward.A.random", {"scale"});
            if (!j_dim || !n_dim) {
                rd.error("forward.A", "random matrix needs forward.J and a valid prior");
                return std::nullopt;
            }
            const double scale = rd.number_or(aj.at("random"), "scale", "forward.A.random", 1.0);
            Rng rng{derive_seed(seed, "forward/A")};
            a = ForwardMap::random_matrix(*j_dim, *n_dim, scale, rng);
        } else {
            auto m = rd.matrix(aj, "forward.A");
            if (!m) {
                return std::nullopt;
            }
            a = std::move(*m);
            if (j_dim && *j_dim != a.rows()) {
                rd.error("forward.J", "does not match the number of rows of A");
            }
            if (n_dim && *n_dim != a.cols()) {
                rd.error("forward.A", "has " + std::to_string(a.cols()) + " columns but the prior dimension is "
                                          + std::to_string(*n_dim));
                return std::nullopt;
            }
        }
        if (*kind == "linear") {
            Vector b = Vector::Zero(a.rows());
            if (auto bv = rd.vector(j, "b", path)) {
                if (bv->size() != a.rows()) {
                    rd.error("forward.b", "length must equal J");
                    return std::nullopt;
                }
                b = *bv;
            }
            return ForwardMap::linear(std::move(a), std::move(b));
        }
        const double eps = rd.number_or(j, "eps", path, 0.1);
        const double radius = rd.number_or(j, "radius", path, std::numeric_limits<double>::infinity());
        return ForwardMap::exp_affine(std::move(a), eps, radius);
    } catch (const Error& e) {
        rd.error(path, e.what());
        return std::nullopt;
    }
}

inline std::optional<NoiseConfig> parse_noise(Reader& rd, const Json& j, std::optional<Eigen::Index> j_dim)
{
    const std::string path = "noise";
    if (!rd.object(j, path)) {
        return std::nullopt;
    }
    rd.allow_keys(j, path, {"kind", "gamma_a", "gamma_m", "alpha", "sigma2", "nodes"});
    const auto kind = rd.string(j, "kind", path);
    if (!kind) {
        if (!j.contains("kind")) {
            rd.error("noise.kind", "missing");
        }
        return std::nullopt;
    }
    NoiseConfig cfg;
    cfg.kind = *kind;
    if (*kind == "gamma") {
        const auto alpha = rd.number(j, "alpha", path);
        if (!alpha || !(*alpha > 0.0)) {
            rd.error("noise.alpha", "must be a positive number");
            return std::nullopt;
        }
        cfg.alpha = *alpha;
        return cfg;
    }
    if (*kind == "lognormal") {
        const auto s2 = rd.number(j, "sigma2", path);
        if (!s2 || !(*s2 > 0.0)) {
            rd.error("noise.sigma2", "must be a positive number");
            return std::nullopt;
        }
        cfg.sigma2 = *s2;
        return cfg;
    }
    if (*kind != "mixed-gaussian" && *kind != "mixed-quadrature") {
        rd.error("noise.kind", "unknown kind '" + *kind + "' (mixed-gaussian, mixed-quadrature, gamma, lognormal)");
        return std::nullopt;
    }
    if (!j_dim) {
        rd.error(path, "needs a valid forward map to fix the data dimension");
        return std::nullopt;
    }
    if (*kind == "mixed-quadrature") {
        auto va = diagonal_variances(rd, j, "gamma_a", path, *j_dim);
        auto vm = diagonal_variances(rd, j, "gamma_m", path, *j_dim);
        cfg.nodes = static_cast<int>(rd.integer_or(j, "nodes", path, 40, 2));
        if (!va || !vm) {
            return std::nullopt;
        }
        cfg.var_a = *va;
        cfg.var_m = *vm;
        return cfg;
    }
    auto ga = covariance(rd, j, "gamma_a", path, *j_dim);
    auto gm = covariance(rd, j, "gamma_m", path, *j_dim);
    if (!ga || !gm) {
        return std::nullopt;
    }
    if (Eigen::LLT<Matrix>(*ga).info() != Eigen::Success) {
        rd.error("noise.gamma_a", "must be positive definite");
        return std::nullopt;
    }
    const double min_m = Eigen::SelfAdjointEigenSolver<Matrix>(*gm, Eigen::EigenvaluesOnly).eigenvalues()[0];
    if (min_m < -1e-12 * std::max(1.0, gm->cwiseAbs().maxCoeff())) {
        rd.error("noise.gamma_m", "must be positive semi-definite");
        return std::nullopt;
    }
    try {
        cfg.mixed.emplace(*ga, *gm);
    } catch (const Error& e) {
        rd.error(path, e.what());
        return std::nullopt;
    }
    return cfg;
}

inline std::optional<Vector> read_data_file(Reader& rd, const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) {
        rd.error("data.file", "cannot open '" + file.string() + "'");
        return std::nullopt;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        try {
            return rd.vector(Json::parse(text), "data.file");
        } catch (const Json::parse_error& e) {
            rd.error("data.file", e.what());
            return std::nullopt;
        }
    }
    for (char& c : text) {
        if (c == ',' || c == ';') {
            c = ' ';
        }
    }
    std::istringstream tokens(text);
    std::vector<double> values;
    std::string tok;
    while (tokens >> tok) {
        if (tok.front() == '#') {
            std::getline(tokens, tok);
            continue;
        }
        try {
            std::size_t used = 0;
            values.push_back(std::stod(tok, &used));
            if (used != tok.size()) {
                throw std::invalid_argument(tok);
            }
        } catch (const std::exception&) {
            rd.error("data.file", "not a number: '" + tok + "'");
            return std::nullopt;
        }
    }
    return mixnoise::detail::to_vector(values);
}

// Square root of a PSD matrix, usable when Gamma^m is singular.
inline Matrix psd_sqrt(const Matrix& m)
{
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
    return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

inline Vector correlated_normal(const Matrix& root, Rng& rng)
{
    Vector z(root.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        z[i] = rng.normal();
    }
    return root * z;
}

/// One observation y = eta_m * G(u_true) (+ eta_a) drawn from the configured noise.
inline DataVector synthesize(const NoiseConfig& noise, const Vector& g, Rng& rng)
{
    const Eigen::Index j = g.size();
    if (noise.kind == "mixed-gaussian") {
        const Vector em = correlated_normal(psd_sqrt(noise.mixed->gamma_m()), rng);
        const Vector ea = correlated_normal(psd_sqrt(noise.mixed->gamma_a()), rng);
        return DataVector{Vector(g.array() * (1.0 + em.array()) + ea.array())};
    }
    if (noise.kind == "mixed-quadrature") {
        Vector y(j);
        for (Eigen::Index i = 0; i < j; ++i) {
            y[i] = g[i] * rng.normal(1.0, std::sqrt(noise.var_m[i])) + rng.normal(0.0, std::sqrt(noise.var_a[i]));
        }
        return DataVector{std::move(y)};
    }
    const auto dens = noise.kind == "gamma" ? MultiplicativeDensity::gamma(j, noise.alpha)
                                            : MultiplicativeDensity::lognormal(j, noise.sigma2);
    Vector y(j);
    for (Eigen::Index i = 0; i < j; ++i) {
        y[i] = dens.sample(i, rng) * g[i];
    }
    return DataVector{std::move(y)};
}

inline std::optional<TruthSpec> parse_truth(Reader& rd, const Json& j, const std::optional<GaussianPrior>& prior,
                                            std::uint64_t seed)
{
    const std::string path = "truth";
    if (!rd.object(j, path)) {
        return std::nullopt;
    }
    rd.allow_keys(j, path, {"coeffs", "in_E", "draw"});
    const bool in_e = rd.boolean_or(j, "in_E", path, true);
    const bool draw = rd.boolean_or(j, "draw", path, false);
    if (draw == j.contains("coeffs")) {
        rd.error(path, "give exactly one of coeffs or draw: true");
        return std::nullopt;
    }
    if (!prior) {
        rd.error(path, "needs a valid prior");
        return std::nullopt;
    }
    if (draw) {
        Rng rng{derive_seed(seed, "truth")};
        return TruthSpec{sample_prior(*prior, rng), in_e};
    }
    auto c = rd.vector(j, "coeffs", path);
    if (!c) {
        return std::nullopt;
    }
    if (c->size() != prior->dim()) {
        rd.error("truth.coeffs", "length " + std::to_string(c->size()) + " does not match prior dimension "
                                     + std::to_string(prior->dim()));
        return std::nullopt;
    }
    return TruthSpec{StateVector{*c}, in_e};
}

inline void parse_minimize(Reader& rd, const Json& j, const std::string& path, MinimizeOptions& opts)
{
    opts.max_iterations = static_cast<int>(rd.integer_or(j, "max_iterations", path, opts.max_iterations, 1));
    opts.grad_tol = rd.number_or(j, "grad_tol", path, opts.grad_tol);
    if (!(opts.grad_tol > 0.0)) {
        rd.error(Reader::join(path, "grad_tol"), "must be positive");
    }
}

inline std::vector<int> int_list(Reader& rd, const Json& j, const std::string& key, const std::string& path,
                                 std::vector<int> fallback)
{
    if (!j.contains(key)) {
        return fallback;
    }
    const Json& v = j.at(key);
    std::vector<int> out;
    if (!v.is_array() || v.empty()) {
        rd.error(Reader::join(path, key), "expected a non-empty list of integers");
        return fallback;
    }
    for (const auto& x : v) {
        if (!x.is_number_integer() || x.get<long long>() < 1) {
            rd.error(Reader::join(path, key), "entries must be positive integers");
            return fallback;
        }
        out.push_back(x.get<int>());
    }
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i] <= out[i - 1]) {
            rd.error(Reader::join(path, key), "must be strictly increasing");
            return fallback;
        }
    }
    return out;
}

inline bool both_pd(const NoiseConfig& n)
{
    return n.mixed && Eigen::LLT<Matrix>(n.mixed->gamma_a()).info() == Eigen::Success
           && Eigen::LLT<Matrix>(n.mixed->gamma_m()).info() == Eigen::Success;
}

} // namespace detail

/// Parses and validates a JSON configuration. All problems are collected and
/// raised together as one ConfigError. `seed_override` replaces the seed
/// given in the file.
inline ExperimentConfig parse_config_text(const std::string& text, const std::string& source_path = "<memory>",
                                          std::optional<std::uint64_t> seed_override = std::nullopt)
{
    std::vector<std::string> errors;
    detail::Reader rd(errors);
    ExperimentConfig cfg;
    cfg.source_path = source_path;
    cfg.config_hash = detail::hash_bytes(text);

    Json root;
    try {
        root = Json::parse(text);
    } catch (const Json::parse_error& e) {
        const auto [line, col] = detail::line_column(text, e.byte);
        throw ConfigError({source_path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": parse error: "
                           + e.what()});
    }
    if (!root.is_object()) {
        throw ConfigError({source_path + ": top level must be an object"});
    }
    rd.allow_keys(root, "", {"seed", "output_dir", "prior", "forward", "noise", "data", "truth", "experiment"});

    if (root.contains("seed")) {
        const Json& s = root.at("seed");
        if (!s.is_number_unsigned()) {
            rd.error("seed", "expected a non-negative integer");
        } else {
            cfg.seed = s.get<std::uint64_t>();
            cfg.seed_source = "config";
        }
    }
    if (seed_override) {
        cfg.seed = *seed_override;
        cfg.seed_source = "cli";
    }
    if (auto od = rd.string(root, "output_dir", "")) {
        cfg.output_dir = *od;
    }

    // Experiment block: exactly one key.
    Json params = Json::object();
    if (!root.contains("experiment") || !root.at("experiment").is_object() || root.at("experiment").size() != 1) {
        rd.error("experiment", "must be an object with exactly one of: map, sample, hellinger, small-noise, "
                               "large-data, verify-appendix");
    } else {
        const auto& [name, body] = *root.at("experiment").items().begin();
        const auto& names = experiment_names();
        if (std::find(names.begin(), names.end(), name) == names.end()) {
            rd.error("experiment", "unknown experiment '" + name + "'");
        } else if (!body.is_object()) {
            rd.error("experiment." + name, "expected an object");
        } else {
            cfg.experiment = name;
            params = body;
        }
    }
    const bool appendix_only = cfg.experiment == "verify-appendix";

    // Model sections.
    if (root.contains("prior")) {
        cfg.prior = detail::parse_prior(rd, root.at("prior"));
    } else if (!appendix_only) {
        rd.error("prior", "missing");
    }
    const std::optional<Eigen::Index> n_dim = cfg.prior ? std::optional<Eigen::Index>(cfg.prior->dim()) : std::nullopt;
    if (root.contains("forward")) {
        cfg.forward = detail::parse_forward(rd, root.at("forward"), n_dim, cfg.seed);
    } else if (!appendix_only) {
        rd.error("forward", "missing");
    }
    const std::optional<Eigen::Index> j_dim
        = cfg.forward ? std::optional<Eigen::Index>(cfg.forward->output_dim()) : std::nullopt;
    if (root.contains("noise")) {
        cfg.noise = detail::parse_noise(rd, root.at("noise"), j_dim);
    } else if (!appendix_only) {
        rd.error("noise", "missing");
    }
    if (root.contains("truth")) {
        cfg.truth = detail::parse_truth(rd, root.at("truth"), cfg.prior, cfg.seed);
        if (cfg.truth && cfg.forward && !cfg.forward->admissible(cfg.truth->coeffs)) {
            rd.error("truth", "outside the admissible ball of the forward map");
            cfg.truth.reset();
        }
    }

    if (root.contains("data")) {
        const Json& d = root.at("data");
        if (rd.object(d, "data")) {
            rd.allow_keys(d, "data", {"y", "file", "synthesize"});
            const int given = static_cast<int>(d.contains("y")) + static_cast<int>(d.contains("file"))
                              + static_cast<int>(d.contains("synthesize"));
            if (given != 1) {
                rd.error("data", "give exactly one of y, file or synthesize");
            } else if (d.contains("y")) {
                if (auto y = rd.vector(d, "y", "data")) {
                    cfg.data = DataVector{*y};
                    cfg.data_source = "inline";
                }
            } else if (d.contains("file")) {
                if (auto f = rd.string(d, "file", "data")) {
                    std::filesystem::path p(*f);
                    if (p.is_relative()) {
                        p = std::filesystem::path(source_path).parent_path() / p;
                    }
                    if (auto y = detail::read_data_file(rd, p)) {
                        cfg.data = DataVector{*y};
                        cfg.data_source = "file";
                    }
                }
            } else if (!d.at("synthesize").is_boolean() || !d.at("synthesize").get<bool>()) {
                rd.error("data.synthesize", "expected true");
            } else if (!cfg.truth || !cfg.forward || !cfg.noise) {
                rd.error("data.synthesize", "needs valid truth, forward and noise sections");
            } else {
                try {
                    Rng rng{derive_seed(cfg.seed, "data")};
                    cfg.data = detail::synthesize(*cfg.noise, cfg.forward->apply(cfg.truth->coeffs).values, rng);
                    cfg.data_source = "synthesized";
                } catch (const Error& e) {
                    rd.error("data.synthesize", e.what());
                }
            }
        }
    }
    if (cfg.data && j_dim && cfg.data->size() != *j_dim) {
        rd.error("data", "length " + std::to_string(cfg.data->size()) + " does not match forward.J = "
                             + std::to_string(*j_dim));
        cfg.data.reset();
    }
    if (cfg.data && cfg.noise && cfg.forward && cfg.forward->is_positive()
        && (cfg.noise->kind == "gamma" || cfg.noise->kind == "lognormal")
        && !(cfg.data->values.array() > 0.0).all()) {
        rd.error("data", "must be positive for a positive forward map with " + cfg.noise->kind + " noise");
    }

    // Experiment parameters.
    const std::string ep = "experiment." + cfg.experiment;
    const auto need_data = [&] {
        if (!root.contains("data")) {
            rd.error("data", "required by the " + cfg.experiment + " experiment");
        }
    };
    const auto need_truth = [&] {
        if (!root.contains("truth")) {
            rd.error("truth", "required by the " + cfg.experiment + " experiment");
        }
    };
    const auto need_pd_mixed = [&] {
        if (cfg.noise && (cfg.noise->kind != "mixed-gaussian" || !detail::both_pd(*cfg.noise))) {
            rd.error("noise", cfg.experiment + " needs mixed-gaussian noise with positive definite gamma_a and gamma_m");
        }
    };
    if (cfg.experiment == "map") {
        need_data();
        rd.allow_keys(params, ep, {"prior_starts", "include_truth", "include_zero", "max_iterations", "grad_tol"});
        cfg.map.prior_starts = static_cast<int>(rd.integer_or(params, "prior_starts", ep, 8, 0));
        cfg.map.include_truth = rd.boolean_or(params, "include_truth", ep, true);
        cfg.map.include_zero = rd.boolean_or(params, "include_zero", ep, true);
        detail::parse_minimize(rd, params, ep, cfg.map.minimize);
    } else if (cfg.experiment == "sample") {
        need_data();
        rd.allow_keys(params, ep, {"n_samples", "beta", "burn_in", "start"});
        cfg.sample.n_samples = static_cast<int>(rd.integer_or(params, "n_samples", ep, 10000, 1));
        if (params.contains("beta")) {
            const auto b = rd.number(params, "beta", ep);
            if (b && !(*b > 0.0 && *b <= 1.0)) {
                rd.error(ep + ".beta", "must lie in (0, 1]");
            }
            cfg.sample.beta = b;
        }
        if (params.contains("burn_in")) {
            cfg.sample.burn_in = static_cast<int>(rd.integer_or(params, "burn_in", ep, 0, 0));
        }
        const std::string start = rd.string(params, "start", ep).value_or("zero");
        if (start != "zero" && start != "truth") {
            rd.error(ep + ".start", "expected 'zero' or 'truth'");
        }
        cfg.sample.start_at_truth = start == "truth";
        if (cfg.sample.start_at_truth) {
            need_truth();
        }
    } else if (cfg.experiment == "hellinger") {
        need_data();
        rd.allow_keys(params, ep, {"n_prior_samples", "batches", "y_prime", "direction", "deltas"});
        cfg.hellinger.n_prior_samples = rd.integer_or(params, "n_prior_samples", ep, 100000, 1);
        cfg.hellinger.batches = static_cast<int>(rd.integer_or(params, "batches", ep, 20, 2));
        cfg.hellinger.y_prime = rd.vector(params, "y_prime", ep);
        cfg.hellinger.direction = rd.vector(params, "direction", ep);
        if (auto d = rd.vector(params, "deltas", ep)) {
            cfg.hellinger.deltas.assign(d->data(), d->data() + d->size());
        }
        if (!params.contains("y_prime") && !params.contains("direction")) {
            rd.error(ep, "needs y_prime, or direction with deltas");
        }
        if (params.contains("direction") != params.contains("deltas")) {
            rd.error(ep, "direction and deltas go together");
        }
        for (const auto* v : {&cfg.hellinger.y_prime, &cfg.hellinger.direction}) {
            if (*v && j_dim && (*v)->size() != *j_dim) {
                rd.error(ep, "y_prime and direction must have length J = " + std::to_string(*j_dim));
            }
        }
        if (cfg.hellinger.n_prior_samples < 2 * cfg.hellinger.batches) {
            rd.error(ep + ".n_prior_samples", "must be at least twice the number of batches");
        }
    } else if (cfg.experiment == "small-noise") {
        need_truth();
        need_pd_mixed();
        rd.allow_keys(params, ep,
                      {"n_values", "seeds", "prior_starts", "include_truth", "zero_noise", "check_rescaling",
                       "max_iterations", "grad_tol"});
        auto& o = cfg.small_noise;
        o.n_values = detail::int_list(rd, params, "n_values", ep, o.n_values);
        o.seeds = static_cast<int>(rd.integer_or(params, "seeds", ep, 20, 1));
        o.prior_starts = static_cast<int>(rd.integer_or(params, "prior_starts", ep, 8, 0));
        o.include_truth_start = rd.boolean_or(params, "include_truth", ep, true);
        o.zero_noise = rd.boolean_or(params, "zero_noise", ep, false);
        o.check_rescaling = rd.boolean_or(params, "check_rescaling", ep, false);
        o.seed = cfg.seed;
        detail::parse_minimize(rd, params, ep, o.minimize);
    } else if (cfg.experiment == "large-data") {
        need_truth();
        need_pd_mixed();
        rd.allow_keys(params, ep,
                      {"n_values", "seeds", "probes", "run_map", "omit_logdet", "prior_starts", "max_iterations",
                       "grad_tol"});
        auto& o = cfg.large_data;
        o.n_values = detail::int_list(rd, params, "n_values", ep, o.n_values);
        o.seeds = static_cast<int>(rd.integer_or(params, "seeds", ep, 10, 1));
        o.run_map = rd.boolean_or(params, "run_map", ep, true);
        o.omit_logdet_variant = rd.boolean_or(params, "omit_logdet", ep, true);
        o.prior_starts = static_cast<int>(rd.integer_or(params, "prior_starts", ep, 8, 0));
        o.seed = cfg.seed;
        detail::parse_minimize(rd, params, ep, o.minimize);
        const Json probes = params.contains("probes") ? params.at("probes") : Json(5);
        if (probes.is_number_integer() && probes.get<long long>() >= 0) {
            if (cfg.prior) {
                Rng rng{derive_seed(cfg.seed, "large-data/probes")};
                for (long long k = 0; k < probes.get<long long>(); ++k) {
                    StateVector u = sample_prior(*cfg.prior, rng);
                    if (cfg.forward) {
                        u = cfg.forward->project_to_admissible(u);
                    }
                    o.probes.push_back(std::move(u));
                }
            }
        } else if (auto m = rd.matrix(probes, ep + ".probes")) {
            if (cfg.prior && m->cols() != cfg.prior->dim()) {
                rd.error(ep + ".probes", "each probe must have the prior dimension");
            } else {
                for (Eigen::Index r = 0; r < m->rows(); ++r) {
                    StateVector u{Vector(m->row(r).transpose())};
                    if (cfg.forward && !cfg.forward->admissible(u)) {
                        rd.error(ep + ".probes[" + std::to_string(r) + "]", "outside the admissible ball");
                    }
                    o.probes.push_back(std::move(u));
                }
            }
        }
    } else if (cfg.experiment == "verify-appendix") {
        rd.allow_keys(params, ep, {"mc_samples", "is_samples", "gamma_a", "gamma_m", "y", "A", "slack"});
        auto& o = cfg.appendix;
        o.mc_samples = rd.integer_or(params, "mc_samples", ep, o.mc_samples, 2);
        o.is_samples = rd.integer_or(params, "is_samples", ep, o.is_samples, 2);
        o.bound_slack = rd.number_or(params, "slack", ep, o.bound_slack);
        if (o.bound_slack < 0.0) {
            rd.error(ep + ".slack", "must be >= 0");
        }
        o.seed = cfg.seed;
        const std::size_t before = rd.count();
        auto y = rd.vector(params, "y", ep);
        const Eigen::Index d = y ? y->size() : o.y.size();
        if (y) {
            o.y = *y;
        }
        if (auto a = rd.vector(params, "A", ep)) {
            o.a_diag = *a;
        }
        if (params.contains("gamma_a")) {
            if (auto v = detail::diagonal_variances(rd, params, "gamma_a", ep, d)) {
                o.var_a = *v;
            }
        } else {
            o.var_a = Vector::Constant(d, o.var_a[0]);
        }
        if (params.contains("gamma_m")) {
            if (auto v = detail::diagonal_variances(rd, params, "gamma_m", ep, d)) {
                o.var_m = *v;
            }
        } else {
            o.var_m = Vector::Constant(d, o.var_m[0]);
        }
        if (rd.count() == before && (o.a_diag.size() != d || o.var_a.size() != d || o.var_m.size() != d)) {
            rd.error(ep, "y, A, gamma_a and gamma_m must have the same length");
        }
    }

    if (!errors.empty()) {
        throw ConfigError(std::move(errors));
    }
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError({path + ": cannot open config file"});
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path, seed_override);
}

/// Potential of the configured noise model bound to data y.
inline Potential make_potential(const ExperimentConfig& cfg, const DataVector& y)
{
    const NoiseConfig& n = *cfg.noise;
    const ForwardMap& f = *cfg.forward;
    if (n.kind == "mixed-gaussian") {
        return mixed_gaussian_potential(f, *n.mixed, y);
    }
    if (n.kind == "mixed-quadrature") {
        return mixed_quadrature_potential(f, AdditiveDensity::gaussian(n.var_a), MultiplicativeDensity::gaussian(n.var_m),
                                          y, n.nodes);
    }
    if (n.kind == "gamma") {
        return gamma_potential(f, n.alpha, y);
    }
    return multiplicative_potential(f, MultiplicativeDensity::lognormal(y.size(), n.sigma2), y);
}

} // namespace mixnoise::harness
