#include "hypctl/dataset.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "hypctl/container.hpp"
#include "hypctl/plant.hpp"
#include "hypctl/rng.hpp"

namespace hypctl {

namespace {

constexpr char kDatasetMagic[4] = {'K', 'D', 'S', '1'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr char kTensorMagic[4] = {'K', 'T', 'N', '1'};
constexpr std::uint32_t kTensorVersion = 1;

std::size_t record_width(int n_s, int kernel_points) {
    const std::size_t tri =
        static_cast<std::size_t>(kernel_points) * (kernel_points + 1) / 2;
    return static_cast<std::size_t>(4 * n_s + 1) + 2 * tri + 2;
}

// Independent per-trajectory draw stream so trajectories can be re-generated
// or extended without replaying the whole master sequence.
std::uint64_t trajectory_seed(std::uint64_t seed, int traj) {
    return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(traj + 1));
}

} // namespace

std::vector<double> estimate_vector(const EstimateState& est, int n_s) {
    if (n_s < 2)
        throw std::invalid_argument("estimate_vector: need n_s >= 2");
    est.check_shapes();
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(4 * n_s + 1));
    const Field* chans[4] = {&est.c1h, &est.c2h, &est.c3h, &est.c4h};
    for (const Field* f : chans)
        for (int k = 0; k < n_s; ++k)
            out.push_back(lerp_field(*f, est.grid,
                                     est.grid.length * k / (n_s - 1)));
    out.push_back(est.rh);
    return out;
}

Dataset generate_dataset(const SamplingRanges& ranges,
                         const DatasetSimParams& sim) {
    if (ranges.n_traj < 1 || ranges.stride < 1)
        throw std::invalid_argument("generate_dataset: n_traj and stride must be >= 1");

    Dataset ds;
    ds.n_s = sim.n_s;
    ds.kernel_grid = sim.kernel_grid;
    ds.ranges = ranges;
    ds.seed = ranges.seed;

    const Grid1D& g = sim.plant_grid;
    Field u0(static_cast<std::size_t>(g.n_points));
    Field m0(static_cast<std::size_t>(g.n_points));
    for (int j = 0; j < g.n_points; ++j) {
        u0[j] = std::sin(2.0 * M_PI * g.x(j));
        m0[j] = g.x(j);
    }

    for (int traj = 0; traj < ranges.n_traj; ++traj) {
        Rng rng(trajectory_seed(ranges.seed, traj));
        const double s1 = rng.uniform(ranges.s1_lo, ranges.s1_hi);
        const double s2 = rng.uniform(ranges.s2_lo, ranges.s2_hi);
        const double s3 = rng.uniform(ranges.s3_lo, ranges.s3_hi);
        const double s4 = rng.uniform(ranges.s4_lo, ranges.s4_hi);
        const double r = rng.uniform(ranges.r_lo, ranges.r_hi);

        PlantParams truth;
        truth.lambda = sim.lambda;
        truth.mu = sim.mu;
        truth.c1 = sample_coeff(CoeffSpec::chebyshev(s1), g);
        truth.c2 = sample_coeff(CoeffSpec::chebyshev(s2), g);
        truth.c3 = sample_coeff(CoeffSpec::sin_shift(s3), g);
        truth.c4 = sample_coeff(CoeffSpec::cos_scale(s4), g);
        truth.r = r;

        const EstimateState est0 = EstimateState::zero(g, sim.bounds, sim.gains);
        IdentifierState id0{u0, m0};

        AdaptiveRunConfig cfg;
        cfg.T = sim.T;
        cfg.dt = sim.dt;
        cfg.recompute_every = sim.recompute_every;
        cfg.kernel_grid = sim.kernel_grid;
        cfg.kernel_opts = sim.kernel_opts;
        cfg.log_every = 0x7fffffff;  // norms are not needed here
        cfg.on_kernel_update = [&](int step, const EstimateState& est,
                                   const KernelPair& kernels) {
            if (step % ranges.stride != 0)
                return;
            DatasetRecord rec;
            rec.est_vector = estimate_vector(est, sim.n_s);
            rec.ku = kernels.ku;
            rec.km = kernels.km;
            rec.t_snapshot = step * sim.dt;
            rec.traj_id = traj;
            ds.records.push_back(std::move(rec));
        };
        run_adaptive(truth, u0, m0, est0, id0, cfg, g);
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    const std::size_t width = record_width(ds.n_s, ds.kernel_grid.n_points);
    const std::size_t tri = static_cast<std::size_t>(ds.kernel_grid.size());
    nlohmann::json desc;
    desc["kind"] = "kernel-dataset";
    desc["n_s"] = ds.n_s;
    desc["kernel_points"] = ds.kernel_grid.n_points;
    desc["record_count"] = ds.records.size();
    desc["record_width"] = width;
    desc["seed"] = ds.seed;
    desc["ranges"] = {
        {"s1", {ds.ranges.s1_lo, ds.ranges.s1_hi}},
        {"s2", {ds.ranges.s2_lo, ds.ranges.s2_hi}},
        {"s3", {ds.ranges.s3_lo, ds.ranges.s3_hi}},
        {"s4", {ds.ranges.s4_lo, ds.ranges.s4_hi}},
        {"r", {ds.ranges.r_lo, ds.ranges.r_hi}},
        {"n_traj", ds.ranges.n_traj},
        {"stride", ds.ranges.stride},
        {"seed", ds.ranges.seed},
    };
    desc["layout"] = "est_vector | ku | km | t_snapshot | traj_id";

    ContainerWriter w(path, kDatasetMagic, kDatasetVersion);
    w.write_descriptor(desc.dump());
    for (const DatasetRecord& rec : ds.records) {
        if (rec.est_vector.size() != static_cast<std::size_t>(4 * ds.n_s + 1) ||
            rec.ku.size() != tri || rec.km.size() != tri)
            throw std::runtime_error("save_dataset " + path +
                                     ": record shapes do not match the header");
        w.write_f64(rec.est_vector.data(), rec.est_vector.size());
        w.write_f64(rec.ku.data(), rec.ku.size());
        w.write_f64(rec.km.data(), rec.km.size());
        const double tail[2] = {rec.t_snapshot,
                                static_cast<double>(rec.traj_id)};
        w.write_f64(tail, 2);
    }
    w.close();
}

Dataset load_dataset(const std::string& path) {
    ContainerReader r(path, kDatasetMagic, kDatasetVersion);
    nlohmann::json desc;
    try {
        desc = nlohmann::json::parse(r.descriptor());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_dataset " + path +
                                 ": bad descriptor JSON: " + e.what());
    }
    Dataset ds;
    std::size_t count = 0, width = 0;
    try {
        ds.n_s = desc.at("n_s").get<int>();
        ds.kernel_grid = TriGrid(desc.at("kernel_points").get<int>());
        count = desc.at("record_count").get<std::size_t>();
        width = desc.at("record_width").get<std::size_t>();
        ds.seed = desc.at("seed").get<std::uint64_t>();
        const nlohmann::json& rg = desc.at("ranges");
        ds.ranges.s1_lo = rg.at("s1")[0].get<double>();
        ds.ranges.s1_hi = rg.at("s1")[1].get<double>();
        ds.ranges.s2_lo = rg.at("s2")[0].get<double>();
        ds.ranges.s2_hi = rg.at("s2")[1].get<double>();
        ds.ranges.s3_lo = rg.at("s3")[0].get<double>();
        ds.ranges.s3_hi = rg.at("s3")[1].get<double>();
        ds.ranges.s4_lo = rg.at("s4")[0].get<double>();
        ds.ranges.s4_hi = rg.at("s4")[1].get<double>();
        ds.ranges.r_lo = rg.at("r")[0].get<double>();
        ds.ranges.r_hi = rg.at("r")[1].get<double>();
        ds.ranges.n_traj = rg.at("n_traj").get<int>();
        ds.ranges.stride = rg.at("stride").get<int>();
        ds.ranges.seed = rg.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_dataset " + path +
                                 ": descriptor missing fields: " + e.what());
    }
    if (width != record_width(ds.n_s, ds.kernel_grid.n_points))
        throw std::runtime_error("load_dataset " + path +
                                 ": record width does not match n_s and grid");
    if (r.payload_f64_count() != count * width)
        throw std::runtime_error(
            "load_dataset " + path + ": payload has " +
            std::to_string(r.payload_f64_count()) + " doubles, expected " +
            std::to_string(count * width));

    const std::size_t tri = static_cast<std::size_t>(ds.kernel_grid.size());
    const std::size_t est_len = static_cast<std::size_t>(4 * ds.n_s + 1);
    ds.records.resize(count);
    for (DatasetRecord& rec : ds.records) {
        rec.est_vector.resize(est_len);
        r.read_f64(rec.est_vector.data(), est_len);
        rec.ku = Field(tri);
        r.read_f64(rec.ku.data(), tri);
        rec.km = Field(tri);
        r.read_f64(rec.km.data(), tri);
        double tail[2];
        r.read_f64(tail, 2);
        rec.t_snapshot = tail[0];
        rec.traj_id = static_cast<int>(std::llround(tail[1]));
    }
    r.expect_consumed();
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double fraction,
                                          std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw std::invalid_argument("split_dataset: fraction must be in [0, 1]");
    const std::size_t n = ds.records.size();
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    rng.shuffle(perm);
    const std::size_t n_test =
        static_cast<std::size_t>(fraction * static_cast<double>(n));

    Dataset train = ds, test = ds;
    train.records.clear();
    test.records.clear();
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_test)
            test.records.push_back(ds.records[perm[i]]);
        else
            train.records.push_back(ds.records[perm[i]]);
    }
    return {std::move(train), std::move(test)};
}

void save_tensors(const std::string& path, const NamedArrays& arrays) {
    nlohmann::json desc;
    desc["kind"] = "named-tensors";
    nlohmann::json list = nlohmann::json::array();
    for (const auto& [name, vals] : arrays)
        list.push_back({{"name", name}, {"count", vals.size()}});
    desc["arrays"] = list;

    ContainerWriter w(path, kTensorMagic, kTensorVersion);
    w.write_descriptor(desc.dump());
    for (const auto& [name, vals] : arrays)
        w.write_f64(vals.data(), vals.size());
    w.close();
}

NamedArrays load_tensors(const std::string& path) {
    ContainerReader r(path, kTensorMagic, kTensorVersion);
    nlohmann::json desc;
    try {
        desc = nlohmann::json::parse(r.descriptor());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_tensors " + path +
                                 ": bad descriptor JSON: " + e.what());
    }
    NamedArrays arrays;
    std::uint64_t total = 0;
    try {
        for (const nlohmann::json& item : desc.at("arrays")) {
            const std::string name = item.at("name").get<std::string>();
            const std::size_t count = item.at("count").get<std::size_t>();
            arrays.emplace_back(name, std::vector<double>(count));
            total += count;
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_tensors " + path +
                                 ": descriptor missing fields: " + e.what());
    }
    if (r.payload_f64_count() != total)
        throw std::runtime_error(
            "load_tensors " + path + ": payload has " +
            std::to_string(r.payload_f64_count()) + " doubles, expected " +
            std::to_string(total));
    for (auto& [name, vals] : arrays)
        r.read_f64(vals.data(), vals.size());
    r.expect_consumed();
    return arrays;
}

} // namespace hypctl
