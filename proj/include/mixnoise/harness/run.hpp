#pragma once

#include "config.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace mixnoise::harness {

enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_runtime = 2, exit_check_failed = 3 };

inline constexpr const char* output_env_var = "MIXNOISE_OUT";

/// Output directory: --out, then $MIXNOISE_OUT, then the config's
/// output_dir, then ./mixnoise-out.
inline std::filesystem::path resolve_output_dir(const std::optional<std::string>& cli_out,
                                                const ExperimentConfig& cfg)
{
    if (cli_out && !cli_out->empty()) {
        return *cli_out;
    }
    if (const char* env = std::getenv(output_env_var); env != nullptr && *env != '\0') {
        return env;
    }
    if (cfg.output_dir) {
        std::filesystem::path p(*cfg.output_dir);
        if (p.is_relative() && cfg.source_path != "<memory>") {
            p = std::filesystem::path(cfg.source_path).parent_path() / p;
        }
        return p;
    }
    return "mixnoise-out";
}

namespace detail {

inline std::string utc_now()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline std::string hex64(std::uint64_t h)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string num(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline Json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

} // namespace detail

/// Writes output files into one directory and keeps the list for the manifest.
class OutputDir {
  public:
    explicit OutputDir(std::filesystem::path root) : root_(std::move(root))
    {
        std::filesystem::create_directories(root_);
    }

    [[nodiscard]] const std::filesystem::path& root() const noexcept { return root_; }
    [[nodiscard]] const std::vector<std::string>& files() const noexcept { return files_; }

    void write_json(const std::string& name, const Json& j)
    {
        write_text(name, j.dump(2) + "\n");
    }

    /// CSV with a header row; numbers printed with 17 significant digits.
    void write_csv(const std::string& name, const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows)
    {
        std::string out;
        const auto line = [&out](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                out += (i ? "," : "") + cells[i];
            }
            out += "\n";
        };
        line(header);
        for (const auto& r : rows) {
            line(r);
        }
        write_text(name, out);
    }

    void write_text(const std::string& name, const std::string& text)
    {
        std::ofstream f(root_ / name, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw std::runtime_error("cannot write " + (root_ / name).string());
        }
        f << text;
        if (std::find(files_.begin(), files_.end(), name) == files_.end()) {
            files_.push_back(name);
        }
    }

  private:
    std::filesystem::path root_;
    std::vector<std::string> files_;
};

struct RunManifest {
    std::string subcommand;
    std::string config_path;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::string seed_source;
    std::string started;
    std::string finished;
    std::string status = "running"; // running | ok | failed | check-failed
    std::string error;
    std::vector<std::string> files;

    [[nodiscard]] Json to_json() const
    {
        return Json{{"tool", "mixnoise"},
                    {"version", version},
                    {"subcommand", subcommand},
                    {"config_path", config_path},
                    {"config_hash", "fnv1a64:" + detail::hex64(config_hash)},
                    {"seed", seed},
                    {"seed_source", seed_source},
                    {"started", started},
                    {"finished", finished.empty() ? Json(nullptr) : Json(finished)},
                    {"status", status},
                    {"error", error.empty() ? Json(nullptr) : Json(error)},
                    {"files", files}};
    }
};

namespace detail {

inline Json start_json(const StartRecord& s)
{
    return Json{{"index", s.index},
                {"origin", s.origin},
                {"initial", to_json(s.initial.coeffs)},
                {"minimizer", to_json(s.minimizer.coeffs)},
                {"value", s.value},
                {"grad_norm", s.grad_norm},
                {"iterations", s.iterations},
                {"converged", s.converged},
                {"message", s.message}};
}

inline int run_map(const ExperimentConfig& cfg, OutputDir& out)
{
    const ObjectiveSpec spec{make_potential(cfg, *cfg.data), *cfg.prior};
    StartPlan plan;
    if (cfg.truth && cfg.map.include_truth) {
        plan.explicit_starts.push_back(cfg.truth->coeffs);
    }
    plan.include_zero = cfg.map.include_zero;
    plan.prior_draws = cfg.map.prior_starts;
    plan.seed = derive_seed(cfg.seed, "map");
    const MapResult r = minimize(spec, plan, cfg.map.minimize);
    Json starts = Json::array();
    for (const auto& s : r.starts) {
        starts.push_back(start_json(s));
    }
    Json j{{"minimizer", to_json(r.minimizer.coeffs)},
           {"value", r.value},
           {"grad_norm", r.grad_norm},
           {"iterations", r.iterations},
           {"converged", r.converged},
           {"restarts_used", r.restarts_used},
           {"local_optima", r.local_optima},
           {"message", r.message},
           {"forward_value", to_json(cfg.forward->apply(r.minimizer).values)},
           {"starts", starts}};
    if (cfg.truth) {
        j["misfit_to_truth"] = (cfg.forward->apply(r.minimizer).values - cfg.forward->apply(cfg.truth->coeffs).values).norm();
    }
    out.write_json("map_result.json", j);
    return exit_ok;
}

inline int run_sample(const ExperimentConfig& cfg, OutputDir& out)
{
    const Potential phi = make_potential(cfg, *cfg.data);
    const StateVector init = cfg.sample.start_at_truth ? cfg.truth->coeffs : StateVector::zero(cfg.prior->dim());
    double beta = 0.0;
    bool tuned = false;
    if (cfg.sample.beta) {
        beta = *cfg.sample.beta;
    } else {
        Rng tune{derive_seed(cfg.seed, "sample/tune")};
        beta = tune_beta(phi, *cfg.prior, init, tune);
        tuned = true;
    }
    PcnOptions opts;
    opts.n_samples = cfg.sample.n_samples;
    opts.beta = beta;
    opts.burn_in = cfg.sample.burn_in;
    opts.init = init;
    Rng rng{derive_seed(cfg.seed, "sample/chain")};
    const Chain chain = pcn_sample(phi, *cfg.prior, opts, rng);

    const Eigen::Index n = cfg.prior->dim();
    std::vector<std::string> header{"step"};
    for (Eigen::Index k = 0; k < n; ++k) {
        header.push_back("u" + std::to_string(k));
    }
    std::vector<std::vector<std::string>> rows;
    Vector mean = Vector::Zero(n);
    Vector sq = Vector::Zero(n);
    for (std::size_t i = 0; i < chain.samples.size(); ++i) {
        std::vector<std::string> row{std::to_string(i)};
        for (Eigen::Index k = 0; k < n; ++k) {
            row.push_back(num(chain.samples[i][k]));
        }
        rows.push_back(std::move(row));
        mean += chain.samples[i].coeffs;
        sq += chain.samples[i].coeffs.cwiseAbs2();
    }
    const double count = static_cast<double>(chain.samples.size());
    mean /= count;
    const Vector var = (sq / count - mean.cwiseAbs2()).cwiseMax(0.0);
    out.write_csv("chain.csv", header, rows);
    out.write_json("sample_summary.json", Json{{"n_samples", chain.samples.size()},
                                               {"burn_in", opts.burn_in.value_or(opts.n_samples / 10)},
                                               {"beta", beta},
                                               {"beta_tuned", tuned},
                                               {"acceptance_rate", chain.acceptance_rate},
                                               {"mean", to_json(mean)},
                                               {"variance", to_json(var)}});
    return exit_ok;
}

inline int run_hellinger(const ExperimentConfig& cfg, OutputDir& out)
{
    const auto& h = cfg.hellinger;
    const auto factory = [&cfg](const DataVector& y) { return make_potential(cfg, y); };
    Json j{{"y", to_json(cfg.data->values)}, {"n_prior_samples", h.n_prior_samples}, {"batches", h.batches}};
    if (h.y_prime) {
        Rng rng{derive_seed(cfg.seed, "hellinger/pair")};
        const auto draws = draw_prior_samples(*cfg.prior, h.n_prior_samples, rng);
        const HellingerEstimate est = hellinger_estimate(factory(*cfg.data), factory(DataVector{*h.y_prime}), draws,
                                                         h.batches);
        j["pair"] = Json{{"y_prime", to_json(*h.y_prime)},
                         {"data_distance", (*h.y_prime - cfg.data->values).norm()},
                         {"hellinger", est.value},
                         {"std_error", est.std_error},
                         {"ess1", est.ess1},
                         {"ess2", est.ess2}};
    }
    if (h.direction) {
        Rng rng{derive_seed(cfg.seed, "hellinger/sweep")};
        const SweepResult sweep
            = wellposedness_sweep(*cfg.data, *h.direction, h.deltas, factory, *cfg.prior, h.n_prior_samples, rng);
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : sweep.rows) {
            rows.push_back({num(r.distance), num(r.hellinger), num(r.std_error)});
        }
        out.write_csv("sweep.csv", {"distance", "hellinger", "std_error"}, rows);
        j["sweep"] = Json{{"direction", to_json(*h.direction)}, {"deltas", h.deltas}, {"slope", sweep.slope}};
    }
    out.write_json("hellinger.json", j);
    return exit_ok;
}

inline int run_small_noise(const ExperimentConfig& cfg, OutputDir& out)
{
    const SmallNoiseRun run
        = small_noise_experiment(*cfg.truth, *cfg.forward, *cfg.noise->mixed, *cfg.prior, cfg.small_noise);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : run.rows) {
        rows.push_back({std::to_string(r.n), std::to_string(r.seed), num(r.misfit_y), num(r.misfit_gamma),
                        num(r.objective), r.converged ? "1" : "0"});
    }
    out.write_csv("small_noise.csv", {"n", "seed", "misfit_Y", "misfit_Gamma", "objective", "converged"}, rows);
    Json per_n = Json::array();
    for (const auto& s : run.summary) {
        per_n.push_back(Json{{"n", s.n},
                             {"median_misfit_Y", s.median_misfit_y},
                             {"median_misfit_Gamma", s.median_misfit_gamma},
                             {"mean_sq_misfit_Gamma", s.mean_sq_misfit_gamma},
                             {"converged", s.converged}});
    }
    Json j{{"seeds", cfg.small_noise.seeds},
           {"n_values", cfg.small_noise.n_values},
           {"loglog_slope_median_misfit_Y", run.slope},
           {"strictly_decreasing", run.strictly_decreasing},
           {"final_over_initial", run.final_ratio},
           {"per_n", per_n}};
    if (cfg.small_noise.check_rescaling) {
        double gap = 0.0;
        for (const auto& r : run.rows) {
            gap = std::max(gap, r.rescaling_gap);
        }
        j["max_rescaling_gap"] = gap;
    }
    out.write_json("small_noise_summary.json", j);
    return exit_ok;
}

inline int run_large_data(const ExperimentConfig& cfg, OutputDir& out)
{
    const LargeDataRun run
        = large_data_experiment(*cfg.truth, *cfg.forward, *cfg.noise->mixed, *cfg.prior, cfg.large_data);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : run.map_rows) {
        rows.push_back({std::to_string(r.n), std::to_string(r.seed), r.variant, num(r.misfit_y), num(r.misfit_gamma),
                        num(r.objective), r.converged ? "1" : "0"});
    }
    out.write_csv("large_data.csv", {"n", "seed", "variant", "misfit_Y", "misfit_Gamma", "objective", "converged"},
                  rows);
    std::vector<std::vector<std::string>> probe_rows;
    for (const auto& r : run.probe_rows) {
        probe_rows.push_back({std::to_string(r.n), std::to_string(r.seed), std::to_string(r.probe), num(r.jn),
                              num(r.limit), num(r.abs_diff)});
    }
    out.write_csv("large_data_probes.csv", {"n", "seed", "probe", "J_n", "J_limit", "abs_diff"}, probe_rows);
    Json probes = Json::array();
    for (const auto& p : cfg.large_data.probes) {
        probes.push_back(to_json(p.coeffs));
    }
    out.write_json("large_data_summary.json",
                   Json{{"note", "evidence only: the large-data MAP limit is motivated, not proven"},
                        {"seeds", cfg.large_data.seeds},
                        {"n_values", cfg.large_data.n_values},
                        {"probes", probes},
                        {"limit_at_truth", run.limit_at_truth},
                        {"limit_at_probes", run.limit_at_probes},
                        {"probe_loglog_slopes", run.probe_slopes}});
    return exit_ok;
}

inline int run_appendix(const ExperimentConfig& cfg, OutputDir& out)
{
    const AppendixReport report = verify_appendix(cfg.appendix);
    Json checks = Json::array();
    for (const auto& c : report.checks) {
        checks.push_back(Json{{"group", c.group},
                              {"label", c.label},
                              {"value", c.value},
                              {"reference", c.reference},
                              {"tolerance", c.tolerance},
                              {"pass", c.pass}});
    }
    out.write_json("verify_appendix.json", Json{{"pass", report.pass()},
                                                {"failures", report.failures()},
                                                {"fitted_bound_constant", report.fitted_constant},
                                                {"checks", checks}});
    return report.pass() ? exit_ok : exit_check_failed;
}

} // namespace detail

struct RunOutcome {
    int exit_code = exit_ok;
    std::filesystem::path output_dir;
    RunManifest manifest;
};

/// Runs the configured experiment, writing outputs and manifest.json into
/// `dir`. The manifest is written before any computation and finalized
/// afterwards, also on failure.
inline RunOutcome run(const ExperimentConfig& cfg, const std::string& subcommand, const std::filesystem::path& dir)
{
    RunOutcome outcome;
    outcome.output_dir = dir;
    RunManifest& m = outcome.manifest;
    m.subcommand = subcommand;
    m.config_path = cfg.source_path;
    m.config_hash = cfg.config_hash;
    m.seed = cfg.seed;
    m.seed_source = cfg.seed_source;
    m.started = detail::utc_now();

    OutputDir out(dir);
    const auto write_manifest = [&] {
        m.files = out.files();
        std::ofstream f(dir / "manifest.json", std::ios::binary | std::ios::trunc);
        f << m.to_json().dump(2) << "\n";
    };
    if (subcommand != cfg.experiment) {
        m.status = "failed";
        m.error = "subcommand '" + subcommand + "' does not match the config's experiment block '" + cfg.experiment + "'";
        m.finished = detail::utc_now();
        write_manifest();
        outcome.exit_code = exit_validation;
        return outcome;
    }
    write_manifest();

    try {
        if (cfg.experiment == "map") {
            outcome.exit_code = detail::run_map(cfg, out);
        } else if (cfg.experiment == "sample") {
            outcome.exit_code = detail::run_sample(cfg, out);
        } else if (cfg.experiment == "hellinger") {
            outcome.exit_code = detail::run_hellinger(cfg, out);
        } else if (cfg.experiment == "small-noise") {
            outcome.exit_code = detail::run_small_noise(cfg, out);
        } else if (cfg.experiment == "large-data") {
            outcome.exit_code = detail::run_large_data(cfg, out);
        } else {
            outcome.exit_code = detail::run_appendix(cfg, out);
        }
        m.status = outcome.exit_code == exit_ok ? "ok" : "check-failed";
    } catch (const std::exception& e) {
        m.status = "failed";
        m.error = e.what();
        outcome.exit_code = exit_runtime;
    }
    m.finished = detail::utc_now();
    write_manifest();
    return outcome;
}

} // namespace mixnoise::harness
