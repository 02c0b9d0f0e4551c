// ssdlab_cli: every experiment behind one executable. Each subcommand reads a
// config (command line wins over --config JSON), writes its artifacts plus a
// manifest.json (config echo, wall clock, file checksums) into --out, and
// exits 0 only if every declared artifact landed on disk.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssdlab/ssdlab.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace ssdlab;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

std::string timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + tmp.string());
        f << content;
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

struct RunContext {
    fs::path out;
    std::vector<std::string> files;  // relative paths of emitted artifacts

    fs::path abspath(const std::string& rel) const { return out / rel; }

    void track(const std::string& rel) { files.push_back(rel); }

    // Creates any subdirectory a relative artifact path needs.
    void ensure_parent(const std::string& rel) const {
        fs::path p = abspath(rel).parent_path();
        if (!p.empty()) fs::create_directories(p);
    }
};

void write_manifest(RunContext& ctx, const std::string& subcommand, const json& config,
                    const std::string& status, const std::string& error = "") {
    json m;
    m["subcommand"] = subcommand;
    m["artifact_version"] = kArtifactVersion;
    m["status"] = status;
    if (!error.empty()) m["error"] = error;
    m["wall_clock_utc"] = timestamp_utc();
    m["config"] = config;
    json files = json::array();
    for (const std::string& rel : ctx.files)
        files.push_back({{"path", rel}, {"checksum", file_checksum(ctx.abspath(rel).string())}});
    m["files"] = files;
    write_text_atomic(ctx.out / "manifest.json", m.dump(2) + "\n");
}

// Binds every option to a name so a --config JSON file can fill in whatever
// the command line left at its default. Unknown config keys are rejected.
class ParamSet {
  public:
    explicit ParamSet(CLI::App* app) : app_(app) {
        app_->add_option("--out", out_, "output directory")->required();
        app_->add_option("--config", config_path_,
                         "JSON config file; command-line flags override its values");
    }

    template <typename T>
    CLI::Option* add(const std::string& name, T& var, const std::string& desc) {
        CLI::Option* opt = app_->add_option("--" + name, var, desc);
        entries_.push_back({name, opt, [&var](const json& v) { var = v.get<T>(); },
                            [&var]() -> json { return var; }});
        return opt;
    }

    CLI::Option* add_flag(const std::string& name, bool& var, const std::string& desc) {
        CLI::Option* opt = app_->add_flag("--" + name, var, desc);
        entries_.push_back({name, opt, [&var](const json& v) { var = v.get<bool>(); },
                            [&var]() -> json { return var; }});
        return opt;
    }

    // Call after parsing: config values apply only where the command line was silent.
    void merge_config() {
        if (config_path_.empty()) return;
        std::ifstream f(config_path_);
        if (!f) throw std::runtime_error("config: cannot open " + config_path_);
        json cfg;
        try {
            cfg = json::parse(f);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("config: " + config_path_ + ": " + e.what());
        }
        if (!cfg.is_object()) throw std::runtime_error("config: top level must be an object");
        for (const auto& [key, value] : cfg.items()) {
            bool found = false;
            for (auto& e : entries_) {
                if (e.name != key) continue;
                found = true;
                if (e.opt->count() == 0) {
                    try {
                        e.set(value);
                    } catch (const json::exception& ex) {
                        throw std::runtime_error("config: bad value for '" + key +
                                                 "': " + ex.what());
                    }
                }
                break;
            }
            if (!found) throw std::runtime_error("config: unknown key '" + key + "'");
        }
    }

    json echo() const {
        json j;
        for (const auto& e : entries_) j[e.name] = e.get();
        return j;
    }

    const std::string& out() const { return out_; }

  private:
    struct Entry {
        std::string name;
        CLI::Option* opt;
        std::function<void(const json&)> set;
        std::function<json()> get;
    };

    CLI::App* app_;
    std::string out_;
    std::string config_path_;
    std::vector<Entry> entries_;
};

// Runs a subcommand body; on failure removes partial outputs and records the
// failure in the manifest before exiting nonzero.
int run_guarded(const std::string& name, ParamSet& ps,
                const std::function<void(RunContext&, const json&)>& body) {
    RunContext ctx{fs::path(ps.out()), {}};
    json config;
    try {
        ps.merge_config();
        config = ps.echo();
        fs::create_directories(ctx.out);
        body(ctx, config);
        write_manifest(ctx, name, config, "ok");
        return 0;
    } catch (const std::exception& e) {
        for (const std::string& rel : ctx.files) {
            std::error_code ec;
            fs::remove(ctx.abspath(rel), ec);
        }
        ctx.files.clear();
        try {
            fs::create_directories(ctx.out);
            write_manifest(ctx, name, config, "failed", e.what());
        } catch (...) {
        }
        std::cerr << name << ": error: " << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------------------
// Shared artifact helpers
// ---------------------------------------------------------------------------

void write_vector_csv(const fs::path& path, const std::vector<Vector>& rows) {
    if (rows.empty()) throw std::runtime_error("write_vector_csv: no rows");
    CsvWriter csv(path.string());
    std::vector<std::string> header;
    for (std::size_t j = 0; j < rows.front().size(); ++j)
        header.push_back("p" + std::to_string(j));
    csv.row(header);
    for (const Vector& r : rows) csv.numeric_row(r);
}

std::vector<Vector> read_vector_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty CSV: " + path.string());
    std::vector<Vector> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        Vector row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("no data rows in " + path.string());
    return rows;
}

std::string image_filename(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05zu.pgm", i);
    return buf;
}

// Writes one PGM per image plus dataset.json under `prefix` (e.g. "" or "dataset/").
void save_dataset(RunContext& ctx, const std::string& prefix, const ShapeDataset& ds,
                  std::uint64_t seed) {
    json meta;
    meta["seed"] = seed;
    meta["n"] = ds.images.size();
    meta["height"] = ds.height;
    meta["width"] = ds.width;
    meta["tri_side"] = ds.tri_side;
    meta["sq_side"] = ds.sq_side;
    json entries = json::array();
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        std::string rel = prefix + image_filename(i);
        ctx.ensure_parent(rel);
        write_pgm(ctx.abspath(rel).string(), ds.images[i], ds.height, ds.width);
        ctx.track(rel);
        const ShapeMeta& m = ds.metadata[i];
        entries.push_back({{"file", image_filename(i)},
                           {"kind", m.kind == ShapeKind::triangle ? "triangle" : "square"},
                           {"anchor_row", m.anchor_row},
                           {"anchor_col", m.anchor_col},
                           {"area", m.area}});
    }
    meta["images"] = entries;
    std::string rel = prefix + "dataset.json";
    ctx.ensure_parent(rel);
    write_text_atomic(ctx.abspath(rel), meta.dump(2) + "\n");
    ctx.track(rel);
}

ShapeDataset load_dataset(const fs::path& dir) {
    std::ifstream f(dir / "dataset.json");
    if (!f) throw std::runtime_error("cannot open " + (dir / "dataset.json").string());
    json meta = json::parse(f);
    ShapeDataset ds;
    ds.height = meta.at("height").get<std::size_t>();
    ds.width = meta.at("width").get<std::size_t>();
    ds.tri_side = meta.at("tri_side").get<std::size_t>();
    ds.sq_side = meta.at("sq_side").get<std::size_t>();
    for (const auto& entry : meta.at("images")) {
        PgmImage img = read_pgm((dir / entry.at("file").get<std::string>()).string());
        if (img.height != ds.height || img.width != ds.width)
            throw std::runtime_error("dataset image size mismatch in " + dir.string());
        ds.images.push_back(std::move(img.pixels));
        std::string kind = entry.at("kind").get<std::string>();
        ds.metadata.push_back({kind == "triangle" ? ShapeKind::triangle : ShapeKind::square,
                               entry.at("anchor_row").get<std::size_t>(),
                               entry.at("anchor_col").get<std::size_t>(),
                               entry.at("area").get<std::size_t>()});
    }
    if (ds.images.empty()) throw std::runtime_error("dataset is empty: " + dir.string());
    return ds;
}

RegressionTarget parse_target(const std::string& name) {
    if (name == "velocity") return RegressionTarget::velocity;
    if (name == "image") return RegressionTarget::clean_image;
    throw std::runtime_error("target must be 'velocity' or 'image', got '" + name + "'");
}

struct TrainSettings {
    double eta = 0.0;
    std::size_t epochs = 1000;
    std::size_t batch_size = 64;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    std::vector<std::size_t> hidden{256, 256};
    std::size_t time_freqs = 8;
    bool normalize = true;
    std::string target = "velocity";
};

VelocityModel train_model(const std::vector<Vector>& data, const TrainSettings& s,
                          std::uint64_t seed, std::vector<double>& loss_trace) {
    RngStream init_rng(seed, 0);
    VelocityModel m = VelocityModel::init(data.front().size(), s.hidden, s.time_freqs, init_rng);
    AdamState opt = AdamState::for_model(m, s.lr, s.beta1, s.beta2);
    SSDLossConfig cfg{s.eta, s.normalize, parse_target(s.target)};
    RngStream train_rng(seed, 1);
    loss_trace = train(m, data, cfg, opt, s.epochs, s.batch_size, train_rng).epoch_loss;
    return m;
}

// Checkpoints do not record the regression target; the sampler must be told
// which field the network parameterizes.
VelocityFn sampling_field(const VelocityModel& model, const std::string& target,
                          bool final_euler) {
    if (parse_target(target) == RegressionTarget::velocity) return model_velocity(model);
    if (!final_euler)
        throw std::runtime_error(
            "target 'image' induces a velocity singular at t = 1; pass --final-euler");
    return denoiser_velocity(model);
}

void write_loss_csv(RunContext& ctx, const std::string& rel, const std::vector<double>& trace) {
    ctx.ensure_parent(rel);
    CsvWriter csv(ctx.abspath(rel).string());
    csv.row({"epoch", "mean_loss"});
    for (std::size_t e = 0; e < trace.size(); ++e)
        csv.numeric_row({static_cast<double>(e), trace[e]});
    ctx.track(rel);
}

void write_heatmap_csv(RunContext& ctx, const std::string& rel, const Vector& flat,
                       std::size_t h, std::size_t w) {
    ctx.ensure_parent(rel);
    CsvWriter csv(ctx.abspath(rel).string());
    for (std::size_t r = 0; r < h; ++r) {
        Vector row(flat.begin() + static_cast<long>(r * w),
                   flat.begin() + static_cast<long>((r + 1) * w));
        csv.numeric_row(row);
    }
    ctx.track(rel);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void setup_spectrum(CLI::App& app, int& rc) {
    struct Opts {
        double rho = 0.7;
        double eta = 0.5;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub = app.add_subcommand(
        "spectrum", "eigenvalue shrinkage of a correlated 2D Gaussian under masking");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("rho", o->rho, "correlation coefficient of the 2x2 covariance");
    o->ps->add("eta", o->eta, "masking probability");
    sub->callback([o, &rc]() {
        rc = run_guarded("spectrum", *o->ps, [o](RunContext& ctx, const json&) {
            CovarianceModel cov(Matrix(2, 2, {1.0, o->rho, o->rho, 1.0}));
            SpectrumReport r = spectrum_report(cov, o->eta);
            CsvWriter csv(ctx.abspath("spectrum.csv").string());
            csv.row({"i", "lambda", "lambda_tilde", "beta"});
            for (std::size_t i = 0; i < r.lambda.size(); ++i)
                csv.numeric_row({static_cast<double>(i), r.lambda[i], r.lambda_tilde[i],
                                 r.beta[i]});
            ctx.track("spectrum.csv");
        });
    });
}

void setup_score2d(CLI::App& app, int& rc) {
    struct Opts {
        std::uint64_t seed = 7;
        double rho = 0.7;
        double t = 0.1;
        std::size_t n_points = 10;
        double eta = 0.5;
        std::size_t n_masks = 64;
        std::size_t grid_res = 30;
        double grid_lo = -3.0;
        double grid_hi = 3.0;
        bool componentwise = false;
        unsigned threads = 1;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub = app.add_subcommand(
        "score2d", "population vs. empirical vs. masked score fields on a 2D Gaussian");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("seed", o->seed, "seed for data points and masks");
    o->ps->add("rho", o->rho, "correlation coefficient");
    o->ps->add("t", o->t, "diffusion time");
    o->ps->add("n-points", o->n_points, "number of training points");
    o->ps->add("eta", o->eta, "masking probability");
    o->ps->add("n-masks", o->n_masks, "masks averaged per grid point");
    o->ps->add("grid-res", o->grid_res, "grid resolution per axis");
    o->ps->add("grid-lo", o->grid_lo, "grid lower bound");
    o->ps->add("grid-hi", o->grid_hi, "grid upper bound");
    o->ps->add_flag("componentwise", o->componentwise,
                    "use componentwise absolute error instead of the Euclidean norm");
    o->ps->add("threads", o->threads, "worker threads (results are thread-count invariant)");
    sub->callback([o, &rc]() {
        rc = run_guarded("score2d", *o->ps, [o](RunContext& ctx, const json&) {
            Gaussian2DConfig cfg(o->rho, o->t, o->n_points);
            CovarianceModel cov(cfg.sigma());
            RngStream data_rng(o->seed, 0);
            auto data = gaussian_sample(data_rng, {0.0, 0.0}, cov, o->n_points);
            RngStream mask_rng(o->seed, 1);
            GridSpec grid{o->grid_lo, o->grid_hi, o->grid_res};
            ScoreLabResult res = score_error_field(cfg, data, o->eta, grid, o->n_masks,
                                                   mask_rng, o->threads, o->componentwise);

            CsvWriter scores(ctx.abspath("scores.csv").string());
            scores.row({"x1", "x2", "pop_s1", "pop_s2", "emp_s1", "emp_s2", "mask_s1",
                        "mask_s2"});
            for (std::size_t i = 0; i < res.population.grid.size(); ++i)
                scores.numeric_row({res.population.grid[i][0], res.population.grid[i][1],
                                    res.population.vectors[i][0], res.population.vectors[i][1],
                                    res.empirical.vectors[i][0], res.empirical.vectors[i][1],
                                    res.masked.vectors[i][0], res.masked.vectors[i][1]});
            ctx.track("scores.csv");

            CsvWriter errors(ctx.abspath("errors.csv").string());
            errors.row({"x1", "x2", "emp_err", "mask_err"});
            for (std::size_t i = 0; i < res.population.grid.size(); ++i)
                errors.numeric_row({res.population.grid[i][0], res.population.grid[i][1],
                                    res.empirical_error.abs_error[i],
                                    res.masked_error.abs_error[i]});
            ctx.track("errors.csv");

            json summary;
            summary["empirical"] = {{"mean_error", res.empirical_error.mean_error},
                                    {"max_error", res.empirical_error.max_error}};
            summary["masked"] = {{"mean_error", res.masked_error.mean_error},
                                 {"max_error", res.masked_error.max_error}};
            write_text_atomic(ctx.abspath("summary.json"), summary.dump(2) + "\n");
            ctx.track("summary.json");
        });
    });
}

void setup_shapes_gen(CLI::App& app, int& rc) {
    struct Opts {
        std::uint64_t seed = 1;
        std::size_t n = 500;
        std::size_t height = 16;
        std::size_t width = 16;
        std::size_t tri_side = 5;
        std::size_t sq_side = 4;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub =
        app.add_subcommand("shapes-gen", "generate the triangle/square binary dataset");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("seed", o->seed, "dataset seed");
    o->ps->add("n", o->n, "number of images");
    o->ps->add("height", o->height, "canvas height");
    o->ps->add("width", o->width, "canvas width");
    o->ps->add("tri-side", o->tri_side, "triangle leg length");
    o->ps->add("sq-side", o->sq_side, "square side length");
    sub->callback([o, &rc]() {
        rc = run_guarded("shapes-gen", *o->ps, [o](RunContext& ctx, const json&) {
            RngStream rng(o->seed);
            ShapeDataset ds =
                generate_shapes(rng, o->n, o->height, o->width, o->tri_side, o->sq_side);
            save_dataset(ctx, "", ds, o->seed);
        });
    });
}

void setup_train(CLI::App& app, int& rc) {
    struct Opts {
        std::uint64_t seed = 1;
        std::string data;
        TrainSettings ts;
        bool raw_sum = false;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub = app.add_subcommand("train", "train a velocity model with the masked loss");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("seed", o->seed, "seed for init and batch sampling");
    o->ps->add("data", o->data, "dataset directory (from shapes-gen)")->required();
    o->ps->add("eta", o->ts.eta, "masking probability (0 = baseline flow matching)");
    o->ps->add("epochs", o->ts.epochs, "training epochs");
    o->ps->add("batch-size", o->ts.batch_size, "batch size");
    o->ps->add("lr", o->ts.lr, "Adam learning rate");
    o->ps->add("beta1", o->ts.beta1, "Adam beta1");
    o->ps->add("beta2", o->ts.beta2, "Adam beta2");
    o->ps->add("hidden", o->ts.hidden, "hidden layer sizes");
    o->ps->add("time-freqs", o->ts.time_freqs, "sinusoidal time embedding frequencies");
    o->ps->add("target", o->ts.target,
               "regression target: 'velocity' (conditional velocity) or 'image' "
               "(clean data sample, denoiser form)");
    o->ps->add_flag("raw-sum", o->raw_sum,
                    "use the raw masked sum instead of dividing by the unmasked count");
    sub->callback([o, &rc]() {
        rc = run_guarded("train", *o->ps, [o](RunContext& ctx, const json&) {
            ShapeDataset ds = load_dataset(o->data);
            o->ts.normalize = !o->raw_sum;
            std::vector<double> trace;
            VelocityModel m = train_model(ds.images, o->ts, o->seed, trace);
            m.save(ctx.abspath("model.ssdm").string());
            ctx.track("model.ssdm");
            write_loss_csv(ctx, "loss.csv", trace);
        });
    });
}

void setup_sample(CLI::App& app, int& rc) {
    struct Opts {
        std::uint64_t seed = 1;
        std::string model;
        std::size_t n = 16;
        std::size_t intervals = 25;
        bool final_euler = false;
        std::vector<double> snapshot_times;
        std::size_t height = 16;
        std::size_t width = 16;
        std::size_t pgm_count = 64;
        std::string target = "velocity";
        unsigned threads = 1;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub =
        app.add_subcommand("sample", "integrate prior noise through a trained model");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("seed", o->seed, "seed for prior noise");
    o->ps->add("model", o->model, "model checkpoint path")->required();
    o->ps->add("n", o->n, "number of samples");
    o->ps->add("intervals", o->intervals, "Heun intervals (NFE is about twice this)");
    o->ps->add_flag("final-euler", o->final_euler, "plain Euler step on the last interval");
    o->ps->add("snapshot-times", o->snapshot_times, "grid times to record along the path");
    o->ps->add("height", o->height, "image height for PGM output");
    o->ps->add("width", o->width, "image width for PGM output");
    o->ps->add("pgm-count", o->pgm_count, "how many samples to also write as PGM");
    o->ps->add("target", o->target,
               "what the checkpoint predicts: 'velocity' or 'image' (denoiser; "
               "requires --final-euler)");
    o->ps->add("threads", o->threads, "worker threads (results are thread-count invariant)");
    sub->callback([o, &rc]() {
        rc = run_guarded("sample", *o->ps, [o](RunContext& ctx, const json&) {
            VelocityModel model = VelocityModel::load(o->model);
            if (model.dim != o->height * o->width)
                throw std::runtime_error("sample: height*width does not match model dim " +
                                         std::to_string(model.dim));
            // snapshot times must lie on the grid to be recorded exactly
            TimeGrid grid = TimeGrid::uniform(o->intervals);
            VelocityFn v = sampling_field(model, o->target, o->final_euler);
            RngStream rng(o->seed);
            SampleRun run = batch_generate(v, o->n, model.dim, grid, rng, o->snapshot_times,
                                           o->final_euler, o->threads);

            write_vector_csv(ctx.abspath("samples.csv"), run.terminal);
            ctx.track("samples.csv");
            for (std::size_t k = 0; k < run.snapshot_times.size(); ++k) {
                std::vector<Vector> snap;
                for (std::size_t i = 0; i < o->n; ++i) snap.push_back(run.snapshots[i][k]);
                std::string rel = "snapshots_" + std::to_string(k) + ".csv";
                write_vector_csv(ctx.abspath(rel), snap);
                ctx.track(rel);
            }
            std::size_t n_pgm = std::min(o->n, o->pgm_count);
            for (std::size_t i = 0; i < n_pgm; ++i) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "sample_%05zu.pgm", i);
                write_pgm(ctx.abspath(buf).string(), run.terminal[i], o->height, o->width);
                ctx.track(buf);
            }
            json info;
            info["seed"] = o->seed;
            info["n"] = o->n;
            info["dim"] = model.dim;
            info["grid_times"] = grid.times;
            info["snapshot_times"] = run.snapshot_times;
            info["nfe_per_sample"] = run.nfe_per_sample;
            info["final_euler"] = o->final_euler;
            write_text_atomic(ctx.abspath("sample.json"), info.dump(2) + "\n");
            ctx.track("sample.json");
        });
    });
}

void setup_eval_spatial(CLI::App& app, int& rc) {
    struct Opts {
        std::string samples;
        std::size_t height = 16;
        std::size_t width = 16;
        double threshold = 0.5;
        std::size_t min_area = 15;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub =
        app.add_subcommand("eval-spatial", "scattered-cluster metrics on generated samples");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("samples", o->samples, "samples.csv from the sample subcommand")->required();
    o->ps->add("height", o->height, "image height");
    o->ps->add("width", o->width, "image width");
    o->ps->add("threshold", o->threshold, "binarization threshold");
    o->ps->add("min-area", o->min_area, "components below this area count as scatter");
    sub->callback([o, &rc]() {
        rc = run_guarded("eval-spatial", *o->ps, [o](RunContext& ctx, const json&) {
            auto samples = read_vector_csv(o->samples);
            ScatterReport rep =
                scatter_metric(samples, o->height, o->width, o->threshold, o->min_area);
            CsvWriter csv(ctx.abspath("spatial.csv").string());
            csv.row({"image", "scatter_clusters", "components"});
            for (std::size_t i = 0; i < samples.size(); ++i)
                csv.numeric_row({static_cast<double>(i),
                                 static_cast<double>(rep.scatters_per_image[i]),
                                 static_cast<double>(rep.cluster_sizes[i].size())});
            ctx.track("spatial.csv");
            json summary;
            summary["n_images"] = samples.size();
            summary["n_scatter_clusters"] = rep.n_scatter_clusters;
            summary["n_inconsistent_images"] = rep.n_inconsistent_images;
            write_text_atomic(ctx.abspath("summary.json"), summary.dump(2) + "\n");
            ctx.track("summary.json");
        });
    });
}

void setup_eval_memorization(CLI::App& app, int& rc) {
    struct Opts {
        std::string samples;
        std::string data;
        unsigned threads = 1;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub = app.add_subcommand("eval-memorization",
                                       "nearest-neighbor distance to the training set");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("samples", o->samples, "samples.csv from the sample subcommand")->required();
    o->ps->add("data", o->data, "dataset directory (from shapes-gen)")->required();
    o->ps->add("threads", o->threads, "worker threads (results are thread-count invariant)");
    sub->callback([o, &rc]() {
        rc = run_guarded("eval-memorization", *o->ps, [o](RunContext& ctx, const json&) {
            auto samples = read_vector_csv(o->samples);
            ShapeDataset ds = load_dataset(o->data);
            MemorizationReport rep = memorization_metric(samples, ds.images, o->threads);
            CsvWriter csv(ctx.abspath("memorization.csv").string());
            csv.row({"sample", "d_mem"});
            for (std::size_t i = 0; i < rep.d_mem.size(); ++i)
                csv.numeric_row({static_cast<double>(i), rep.d_mem[i]});
            ctx.track("memorization.csv");
            json summary;
            summary["n_samples"] = rep.d_mem.size();
            summary["mean_d_mem"] = rep.mean;
            summary["stddev_d_mem"] = rep.stddev;
            write_text_atomic(ctx.abspath("summary.json"), summary.dump(2) + "\n");
            ctx.track("summary.json");
        });
    });
}

void setup_sensitivity(CLI::App& app, int& rc) {
    struct Opts {
        bool analytic = false;
        std::string model;
        std::string data;
        double t = 0.789;
        int pixel_row = -1;  // -1 = image center
        int pixel_col = -1;
        double eta = 0.5;
        double snr_exponent = 2.0;
        std::size_t n_images = 64;
        std::size_t n_noise = 64;
        std::uint64_t seed = 1;
        unsigned threads = 1;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub = app.add_subcommand(
        "sensitivity", "gradient-sensitivity heatmaps (trained model or closed form)");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add_flag("analytic", o->analytic,
                    "use the closed-form linear denoiser on the dataset covariance");
    o->ps->add("model", o->model, "model checkpoint (required unless --analytic)");
    o->ps->add("data", o->data, "dataset directory (from shapes-gen)")->required();
    o->ps->add("t", o->t, "noise level along the flow path");
    o->ps->add("pixel-row", o->pixel_row, "output pixel row (-1 = center)");
    o->ps->add("pixel-col", o->pixel_col, "output pixel column (-1 = center)");
    o->ps->add("eta", o->eta, "masking probability for the analytic comparison");
    o->ps->add("snr-exponent", o->snr_exponent, "eigenvalue exponent in the SNR gains");
    o->ps->add("n-images", o->n_images, "images evaluated (model mode)");
    o->ps->add("n-noise", o->n_noise, "noise draws per image (model mode)");
    o->ps->add("seed", o->seed, "seed for the noise draws (model mode)");
    o->ps->add("threads", o->threads, "worker threads (results are thread-count invariant)");
    sub->callback([o, &rc]() {
        rc = run_guarded("sensitivity", *o->ps, [o](RunContext& ctx, const json&) {
            ShapeDataset ds = load_dataset(o->data);
            const std::size_t h = ds.height, w = ds.width, dim = ds.dim();
            std::size_t pr = o->pixel_row < 0 ? h / 2 : static_cast<std::size_t>(o->pixel_row);
            std::size_t pc = o->pixel_col < 0 ? w / 2 : static_cast<std::size_t>(o->pixel_col);
            if (pr >= h || pc >= w) throw std::runtime_error("sensitivity: pixel out of bounds");

            json summary;
            summary["pixel"] = {pr, pc};

            if (o->analytic) {
                // empirical pixel covariance of the dataset, mean-centered
                Vector mean(dim, 0.0);
                for (const Vector& x : ds.images)
                    for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
                for (double& v : mean) v /= static_cast<double>(ds.images.size());
                Matrix sigma(dim, dim);
                for (const Vector& x : ds.images)
                    for (std::size_t a = 0; a < dim; ++a)
                        for (std::size_t b = 0; b < dim; ++b)
                            sigma(a, b) += (x[a] - mean[a]) * (x[b] - mean[b]);
                for (double& v : sigma.data) v /= static_cast<double>(ds.images.size());
                CovarianceModel cov(sigma);
                auto [base, masked] = masked_sensitivity_shift(
                    cov, o->eta, o->t, linear_path_alpha(), linear_path_sigma(),
                    o->snr_exponent);
                std::size_t q = pr * w + pc;
                Vector base_row(dim), masked_row(dim);
                double base_l1 = 0.0, masked_l1 = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    base_row[c] = base(q, c);
                    masked_row[c] = masked(q, c);
                    base_l1 += std::abs(base_row[c]);
                    masked_l1 += std::abs(masked_row[c]);
                }
                write_heatmap_csv(ctx, "base_heatmap.csv", base_row, h, w);
                write_heatmap_csv(ctx, "masked_heatmap.csv", masked_row, h, w);
                summary["base_l1"] = base_l1;
                summary["masked_l1"] = masked_l1;
            } else {
                if (o->model.empty())
                    throw std::runtime_error("sensitivity: --model is required without --analytic");
                VelocityModel model = VelocityModel::load(o->model);
                if (model.dim != dim)
                    throw std::runtime_error("sensitivity: model/dataset dimension mismatch");
                RngStream rng(o->seed);
                SensitivityStats st = sensitivity_stats(model, ds.images, h, w, o->t, pr, pc,
                                                        o->n_images, o->n_noise, rng,
                                                        o->threads);
                CsvWriter csv(ctx.abspath("per_image.csv").string());
                csv.row({"image", "l1_norm"});
                for (std::size_t i = 0; i < st.per_image_l1.size(); ++i)
                    csv.numeric_row({static_cast<double>(i), st.per_image_l1[i]});
                ctx.track("per_image.csv");
                // mean per-pixel magnitude across images, as an h x w heatmap
                Vector heat(dim, 0.0);
                std::size_t n_imgs = st.per_image_l1.size();
                for (std::size_t i = 0; i < n_imgs; ++i)
                    for (std::size_t j = 0; j < dim; ++j)
                        heat[j] += st.per_pixel_magnitude[i * dim + j];
                for (double& v : heat) v /= static_cast<double>(n_imgs);
                write_heatmap_csv(ctx, "heatmap.csv", heat, h, w);
                summary["n_images"] = n_imgs;
                summary["n_noise"] = o->n_noise;
                summary["mean_l1"] = st.mean_l1;
                summary["iqr"] = st.iqr;
            }
            write_text_atomic(ctx.abspath("summary.json"), summary.dump(2) + "\n");
            ctx.track("summary.json");
        });
    });
}

void setup_repro(CLI::App& app, int& rc) {
    struct Opts {
        std::uint64_t seed = 1;
        std::size_t n_images = 500;
        std::size_t height = 16;
        std::size_t width = 16;
        std::size_t tri_side = 5;
        std::size_t sq_side = 4;
        double eta = 0.5;
        std::size_t epochs = 200;
        std::size_t batch_size = 64;
        double lr = 1e-3;
        std::vector<std::size_t> hidden{1024};
        std::string target = "image";
        std::size_t n_samples = 2000;
        std::size_t intervals = 25;
        std::size_t n_sens_images = 64;
        std::size_t n_sens_noise = 16;
        double sens_t = 0.789;
        unsigned threads = 1;
        std::unique_ptr<ParamSet> ps;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* sub = app.add_subcommand(
        "repro", "full pipeline: dataset, baseline vs. masked training, sampling, metrics");
    o->ps = std::make_unique<ParamSet>(sub);
    o->ps->add("seed", o->seed, "pipeline seed");
    o->ps->add("n-images", o->n_images, "training images");
    o->ps->add("height", o->height, "canvas height");
    o->ps->add("width", o->width, "canvas width");
    o->ps->add("tri-side", o->tri_side, "triangle leg length");
    o->ps->add("sq-side", o->sq_side, "square side length");
    o->ps->add("eta", o->eta, "masking probability for the SSD model");
    o->ps->add("epochs", o->epochs, "training epochs per model");
    o->ps->add("batch-size", o->batch_size, "batch size");
    o->ps->add("lr", o->lr, "Adam learning rate");
    o->ps->add("hidden", o->hidden, "hidden layer sizes");
    o->ps->add("target", o->target,
               "regression target for both arms: 'velocity' or 'image' (denoiser form; "
               "sampled with a final Euler step)");
    o->ps->add("n-samples", o->n_samples, "generated samples per model");
    o->ps->add("intervals", o->intervals, "Heun intervals for sampling");
    o->ps->add("n-sens-images", o->n_sens_images, "images in the sensitivity comparison");
    o->ps->add("n-sens-noise", o->n_sens_noise, "noise draws per sensitivity image");
    o->ps->add("sens-t", o->sens_t, "noise level for the sensitivity comparison");
    o->ps->add("threads", o->threads, "worker threads (results are thread-count invariant)");
    sub->callback([o, &rc]() {
        rc = run_guarded("repro", *o->ps, [o](RunContext& ctx, const json&) {
            // 1. dataset
            RngStream data_rng(o->seed, 100);
            ShapeDataset ds = generate_shapes(data_rng, o->n_images, o->height, o->width,
                                              o->tri_side, o->sq_side);
            save_dataset(ctx, "dataset/", ds, o->seed);

            // 2. train both models with identical seeds and budgets
            TrainSettings ts;
            ts.epochs = o->epochs;
            ts.batch_size = o->batch_size;
            ts.lr = o->lr;
            ts.hidden = o->hidden;
            ts.target = o->target;
            const bool final_euler = parse_target(o->target) == RegressionTarget::clean_image;
            struct Arm {
                std::string name;
                double eta;
                VelocityModel model{};
                std::size_t scatter_clusters = 0;
                std::size_t inconsistent = 0;
                double mean_d_mem = 0.0;
                double sens_mean_l1 = 0.0;
                double sens_iqr = 0.0;
            };
            std::vector<Arm> arms{{"baseline", 0.0}, {"ssd", o->eta}};
            for (Arm& arm : arms) {
                ts.eta = arm.eta;
                std::vector<double> trace;
                arm.model = train_model(ds.images, ts, o->seed, trace);
                ctx.ensure_parent(arm.name + "/model.ssdm");
                arm.model.save(ctx.abspath(arm.name + "/model.ssdm").string());
                ctx.track(arm.name + "/model.ssdm");
                write_loss_csv(ctx, arm.name + "/loss.csv", trace);
            }

            // 3-5. sample, spatial consistency, memorization, sensitivity
            TimeGrid grid = TimeGrid::uniform(o->intervals);
            for (Arm& arm : arms) {
                VelocityFn v = sampling_field(arm.model, o->target, final_euler);
                RngStream sample_rng(o->seed, 200);  // same noise for both arms
                SampleRun run = batch_generate(v, o->n_samples, ds.dim(), grid, sample_rng,
                                               {}, final_euler, o->threads);
                ScatterReport sc = scatter_metric(run.terminal, o->height, o->width, 0.5,
                                                  ds.min_shape_area());
                arm.scatter_clusters = sc.n_scatter_clusters;
                arm.inconsistent = sc.n_inconsistent_images;
                MemorizationReport mem =
                    memorization_metric(run.terminal, ds.images, o->threads);
                arm.mean_d_mem = mem.mean;
                RngStream sens_rng(o->seed, 300);
                SensitivityStats st = sensitivity_stats(
                    arm.model, ds.images, o->height, o->width, o->sens_t, o->height / 2,
                    o->width / 2, o->n_sens_images, o->n_sens_noise, sens_rng, o->threads);
                arm.sens_mean_l1 = st.mean_l1;
                arm.sens_iqr = st.iqr;
                std::size_t n_pgm = std::min<std::size_t>(o->n_samples, 16);
                for (std::size_t i = 0; i < n_pgm; ++i) {
                    char buf[32];
                    std::snprintf(buf, sizeof(buf), "/sample_%05zu.pgm", i);
                    std::string rel = arm.name + buf;
                    write_pgm(ctx.abspath(rel).string(), run.terminal[i], o->height,
                              o->width);
                    ctx.track(rel);
                }
            }

            // 6. comparison table
            CsvWriter csv(ctx.abspath("comparison.csv").string());
            csv.row({"metric", "baseline", "ssd"});
            auto row = [&csv](const std::string& name, double a, double b) {
                csv.row({name, format_double(a), format_double(b)});
            };
            row("scatter_clusters", static_cast<double>(arms[0].scatter_clusters),
                static_cast<double>(arms[1].scatter_clusters));
            row("inconsistent_images", static_cast<double>(arms[0].inconsistent),
                static_cast<double>(arms[1].inconsistent));
            row("mean_d_mem", arms[0].mean_d_mem, arms[1].mean_d_mem);
            row("sensitivity_mean_l1", arms[0].sens_mean_l1, arms[1].sens_mean_l1);
            row("sensitivity_iqr", arms[0].sens_iqr, arms[1].sens_iqr);
            ctx.track("comparison.csv");

            json summary;
            for (const Arm& arm : arms)
                summary[arm.name] = {{"scatter_clusters", arm.scatter_clusters},
                                     {"inconsistent_images", arm.inconsistent},
                                     {"mean_d_mem", arm.mean_d_mem},
                                     {"sensitivity_mean_l1", arm.sens_mean_l1},
                                     {"sensitivity_iqr", arm.sens_iqr}};
            double ratio = arms[1].scatter_clusters == 0
                               ? std::numeric_limits<double>::infinity()
                               : static_cast<double>(arms[0].scatter_clusters) /
                                     static_cast<double>(arms[1].scatter_clusters);
            summary["scatter_reduction_factor"] =
                std::isinf(ratio) ? json("inf") : json(ratio);
            write_text_atomic(ctx.abspath("summary.json"), summary.dump(2) + "\n");
            ctx.track("summary.json");
        });
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparsely supervised diffusion lab"};
    app.require_subcommand(1);
    int rc = 0;
    setup_spectrum(app, rc);
    setup_score2d(app, rc);
    setup_shapes_gen(app, rc);
    setup_train(app, rc);
    setup_sample(app, rc);
    setup_eval_spatial(app, rc);
    setup_eval_memorization(app, rc);
    setup_sensitivity(app, rc);
    setup_repro(app, rc);
    CLI11_PARSE(app, argc, argv);
    return rc;
}
