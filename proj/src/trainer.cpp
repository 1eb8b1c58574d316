#include "dada/trainer.hpp"

#include <Eigen/Core>

#include <cmath>
#include <fstream>
#include <future>

#include "dada/error.hpp"
#include "dada/fusion.hpp"
#include "dada/losses.hpp"
#include "dada/metrics.hpp"
#include "dada/rng.hpp"

namespace dada::train {

namespace fs = std::filesystem;

namespace {

constexpr double kPolyPower = 0.9;
constexpr std::uint64_t kSourceStream = 0x534F55524345ull;
constexpr std::uint64_t kTargetStream = 0x544152474554ull;

template <typename T>
void check_finite(double v, std::int64_t iteration, const char* term) {
    if (!std::isfinite(v))
        throw NumericError("iteration " + std::to_string(iteration) + ": non-finite " + term + " (" +
                           std::to_string(v) + ")");
}

template <typename T>
void sgd_step(model::ParamSet<T>& params, SgdState<T>& st, double lr, double momentum, double weight_decay) {
    auto& entries = params.entries();
    if (st.velocity.size() != entries.size()) {
        st.velocity.clear();
        for (const auto& e : entries) st.velocity.emplace_back(e.second.value().shape());
    }
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& var = entries[k].second;
        if (!var.has_grad()) continue;  // parameters outside the active graph are left untouched
        auto& p = var.mutable_value();
        const auto& g = var.grad();
        auto& vel = st.velocity[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = static_cast<double>(g[i]) + weight_decay * static_cast<double>(p[i]);
            vel[i] = static_cast<T>(momentum * static_cast<double>(vel[i]) + d);
            p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * static_cast<double>(vel[i]));
        }
    }
}

template <typename T>
void adam_step(model::ParamSet<T>& params, AdamState<T>& st, double lr, double beta1, double beta2) {
    constexpr double eps = 1e-8;
    auto& entries = params.entries();
    if (st.m.size() != entries.size()) {
        st.m.clear();
        st.v.clear();
        for (const auto& e : entries) {
            st.m.emplace_back(e.second.value().shape());
            st.v.emplace_back(e.second.value().shape());
        }
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& var = entries[k].second;
        if (!var.has_grad()) continue;
        auto& p = var.mutable_value();
        const auto& g = var.grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double m = beta1 * static_cast<double>(st.m[k][i]) + (1 - beta1) * gi;
            const double v = beta2 * static_cast<double>(st.v[k][i]) + (1 - beta2) * gi * gi;
            st.m[k][i] = static_cast<T>(m);
            st.v[k][i] = static_cast<T>(v);
            p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * (m / c1) / (std::sqrt(v / c2) + eps));
        }
    }
}

template <typename T>
bool no_grads(const model::ParamSet<T>& params) {
    for (const auto& e : params.entries())
        if (e.second.has_grad()) return false;
    return true;
}

/// One adversarial channel: a discriminator and the maps it compares.
template <typename T>
struct AlignedPair {
    model::DiscriminatorParams<T>* disc;
    AdamState<T>* opt;
    ad::Var<T> source_rep;
    ad::Var<T> target_rep;
};

template <typename T>
ad::Var<T> surprisal_rep(const model::ForwardOutputs<T>& out, bool dada_fusion) {
    auto info = ad::self_information(out.seg, fusion::kSurprisalLogBase);
    return dada_fusion ? ad::mul_broadcast_channels(info, out.depth) : info;
}

template <typename T>
std::uint64_t disc_hash(const TrainState<T>& s) {
    std::uint64_t h = 0;
    if (s.disc_main) h ^= s.disc_main->params.hash();
    if (s.disc_depth) h ^= splitmix64(s.disc_depth->params.hash());
    return h;
}

template <typename T>
void write_tensor_list(std::vector<model::TensorRecord>& out, const std::vector<Tensor<T>>& tensors,
                       const std::string& prefix) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
        out.push_back({prefix + std::to_string(i), tensors[i].shape(),
                       std::vector<double>(tensors[i].storage().begin(), tensors[i].storage().end())});
}

template <typename T>
std::vector<Tensor<T>> read_tensor_list(const std::vector<model::TensorRecord>& records, const std::string& prefix) {
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0;; ++i) {
        const auto name = prefix + std::to_string(i);
        const model::TensorRecord* found = nullptr;
        for (const auto& r : records)
            if (r.name == name) found = &r;
        if (!found) break;
        out.emplace_back(found->shape, std::vector<T>(found->values.begin(), found->values.end()));
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0) || !std::isfinite(v)) throw ConfigError(std::string("train config: ") + name + " must be positive");
    };
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0) || !std::isfinite(v))
            throw ConfigError(std::string("train config: ") + name + " must be non-negative");
    };
    nonneg(lambda_dep, "lambda_dep");
    nonneg(lambda_adv, "lambda_adv");
    positive(gen_lr, "gen_lr");
    positive(disc_lr, "disc_lr");
    nonneg(gen_weight_decay, "gen_weight_decay");
    if (!(gen_momentum >= 0 && gen_momentum < 1)) throw ConfigError("train config: gen_momentum must lie in [0, 1)");
    if (!(disc_beta1 >= 0 && disc_beta1 < 1) || !(disc_beta2 >= 0 && disc_beta2 < 1))
        throw ConfigError("train config: Adam betas must lie in [0, 1)");
    if (iterations < 0) throw ConfigError("train config: iterations must be >= 0");
    if (eval_every < 0) throw ConfigError("train config: eval_every must be >= 0");
    positive(berhu_fraction, "berhu_fraction");
    if (!(source_fraction > 0 && source_fraction <= 1)) throw ConfigError("train config: source_fraction must lie in (0, 1]");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lambda_dep", c.lambda_dep},
            {"lambda_adv", c.lambda_adv},
            {"gen_lr", c.gen_lr},
            {"gen_momentum", c.gen_momentum},
            {"gen_weight_decay", c.gen_weight_decay},
            {"disc_lr", c.disc_lr},
            {"disc_beta1", c.disc_beta1},
            {"disc_beta2", c.disc_beta2},
            {"iterations", c.iterations},
            {"seed", c.seed},
            {"lr_schedule", c.lr_schedule == LrSchedule::Poly ? "poly" : "constant"},
            {"eval_every", c.eval_every},
            {"berhu_fraction", c.berhu_fraction},
            {"source_fraction", c.source_fraction},
            {"disc_first", c.disc_first}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lambda_dep = j.at("lambda_dep").get<double>();
    c.lambda_adv = j.at("lambda_adv").get<double>();
    c.gen_lr = j.at("gen_lr").get<double>();
    c.gen_momentum = j.at("gen_momentum").get<double>();
    c.gen_weight_decay = j.at("gen_weight_decay").get<double>();
    c.disc_lr = j.at("disc_lr").get<double>();
    c.disc_beta1 = j.at("disc_beta1").get<double>();
    c.disc_beta2 = j.at("disc_beta2").get<double>();
    c.iterations = j.at("iterations").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.lr_schedule = j.at("lr_schedule").get<std::string>() == "poly" ? LrSchedule::Poly : LrSchedule::Constant;
    c.eval_every = j.at("eval_every").get<std::int64_t>();
    c.berhu_fraction = j.at("berhu_fraction").get<double>();
    c.source_fraction = j.at("source_fraction").get<double>();
    c.disc_first = j.at("disc_first").get<bool>();
    c.validate();
    return c;
}

AblationSetup AblationSetup::preset(int index) {
    //                      surp   depth  feat   dada
    static const bool table[7][4] = {{false, false, false, false}, {true, false, false, false},
                                     {true, false, true, false},   {false, true, false, false},
                                     {false, true, true, false},   {true, true, true, false},
                                     {true, true, true, true}};
    if (index < 1 || index > 7) throw ConfigError("ablation preset must be S1..S7");
    const auto& row = table[index - 1];
    return {"S" + std::to_string(index), row[0], row[1], row[2], row[3]};
}

AblationSetup AblationSetup::parse(const std::string& name) {
    if (name.size() == 2 && (name[0] == 'S' || name[0] == 's') && name[1] >= '1' && name[1] <= '7')
        return preset(name[1] - '0');
    throw ConfigError("unknown ablation setup '" + name + "' (expected S1..S7)");
}

std::vector<AblationSetup> AblationSetup::all_presets() {
    std::vector<AblationSetup> out;
    for (int i = 1; i <= 7; ++i) out.push_back(preset(i));
    return out;
}

void AblationSetup::validate() const {
    if (dada_fusion && !(surp_adapt && depth_adapt && feat_fusion))
        throw ConfigError("ablation " + name + ": DADA fusion requires surprisal adaptation, depth adaptation and feature fusion");
}

model::ForwardOptions AblationSetup::forward_options() const {
    model::ForwardOptions o;
    o.depth_branch = depth_supervised();
    o.feature_fusion = feat_fusion;
    return o;
}

nlohmann::json to_json(const LossValues& l) {
    return {{"seg_loss", l.seg_loss},
            {"depth_loss", l.depth_loss},
            {"source_objective", l.source_objective},
            {"d_loss", l.d_loss},
            {"adv_loss", l.adv_loss}};
}

double learning_rate(double base, LrSchedule schedule, std::int64_t iteration, std::int64_t total) {
    if (schedule == LrSchedule::Constant || total <= 0) return base;
    const double progress = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(total));
    return base * std::pow(1.0 - progress, kPolyPower);
}

template <typename T>
TrainState<T> init_train_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg, const AblationSetup& setup) {
    cfg.validate();
    setup.validate();
    TrainState<T> s;
    s.config = cfg;
    s.setup = setup;
    s.model = model::init_model<T>(model_cfg, cfg.seed);
    s.model.arch = setup.forward_options();
    if (setup.uses_main_discriminator()) {
        model::DiscriminatorConfig dc;
        dc.in_channels = model_cfg.num_classes;
        s.disc_main = model::init_discriminator<T>(dc, hash_combine(cfg.seed, 1));
    }
    if (setup.uses_depth_discriminator()) {
        model::DiscriminatorConfig dc;
        dc.in_channels = 1;
        s.disc_depth = model::init_discriminator<T>(dc, hash_combine(cfg.seed, 2));
    }
    return s;
}

template <typename T>
LossValues train_step(TrainState<T>& state, const SourceSample& source, std::span<const float> target_image,
                      const StepOptions& opts) {
    const auto& cfg = state.config;
    const auto& setup = state.setup;
    const auto& mc = state.model.config;
    const auto it = state.iteration;
    const auto arch = setup.forward_options();
    const double lambda_dep = setup.depth_supervised() ? cfg.lambda_dep : 0.0;

    auto& gen = state.model.params;
    gen.zero_grad();
    gen.set_requires_grad(true);
    if (state.disc_main) state.disc_main->params.zero_grad();
    if (state.disc_depth) state.disc_depth->params.zero_grad();

    LossValues lv;
    const auto xs = model::image_to_chw<T>(source.image, mc.input_height, mc.input_width);
    const auto src = model::forward(state.model, xs, arch);
    auto seg = ad::seg_nll(src.seg, source.labels);
    lv.seg_loss = static_cast<double>(seg.value()[0]);
    check_finite<T>(lv.seg_loss, it, "seg_loss");
    ad::Var<T> objective = seg;
    if (setup.depth_supervised()) {
        Tensor<T> z({1, mc.input_height, mc.input_width});
        if (source.inv_depth.size() != z.size()) throw ShapeError("train_step: source depth map has wrong size");
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<T>(source.inv_depth[i]);
        auto dep = ad::berhu_loss(src.depth, z, cfg.berhu_fraction);
        lv.depth_loss = static_cast<double>(dep.value()[0]);
        check_finite<T>(lv.depth_loss, it, "depth_loss");
        objective = ad::add(seg, ad::scale(dep, static_cast<T>(lambda_dep)));
    }
    lv.source_objective = losses::source_objective(lv.seg_loss, lv.depth_loss, lambda_dep);

    const double gen_lr = learning_rate(cfg.gen_lr, cfg.lr_schedule, it, cfg.iterations);
    const double disc_lr = learning_rate(cfg.disc_lr, cfg.lr_schedule, it, cfg.iterations);

    if (!setup.adapts()) {
        ad::backward(objective);
        sgd_step(gen, state.gen_opt, gen_lr, cfg.gen_momentum, cfg.gen_weight_decay);
        ++state.iteration;
        return lv;
    }

    const auto xt = model::image_to_chw<T>(target_image, mc.input_height, mc.input_width);
    const auto tgt = model::forward(state.model, xt, arch);

    std::vector<AlignedPair<T>> pairs;
    if (state.disc_main)
        pairs.push_back({&*state.disc_main, &state.main_opt, surprisal_rep(src, setup.dada_fusion),
                         surprisal_rep(tgt, setup.dada_fusion)});
    if (state.disc_depth) pairs.push_back({&*state.disc_depth, &state.depth_opt, src.depth, tgt.depth});

    auto disc_update = [&] {
        const auto gen_hash = opts.verify_isolation ? gen.hash() : 0;
        const auto gen_grad_hash = opts.verify_isolation ? gen.grad_hash() : 0;
        lv.d_loss = 0;
        for (auto& p : pairs) {
            p.disc->params.set_requires_grad(true);
            auto ls = ad::domain_bce(model::discriminator_forward(*p.disc, p.source_rep.detach()), 1);
            auto lt = ad::domain_bce(model::discriminator_forward(*p.disc, p.target_rep.detach()), 0);
            auto ld = ad::add(ls, lt);
            const double v = static_cast<double>(ld.value()[0]);
            check_finite<T>(v, it, "d_loss");
            lv.d_loss += v;
            ad::backward(ld);
            adam_step(p.disc->params, *p.opt, disc_lr, cfg.disc_beta1, cfg.disc_beta2);
        }
        if (opts.verify_isolation && opts.isolation) {
            opts.isolation->generator_untouched_by_disc_update = opts.isolation->generator_untouched_by_disc_update &&
                                                                  gen.hash() == gen_hash;
            opts.isolation->generator_grads_empty_after_disc_backward =
                opts.isolation->generator_grads_empty_after_disc_backward && gen.grad_hash() == gen_grad_hash;
        }
    };

    auto gen_update = [&] {
        const auto dh = opts.verify_isolation ? disc_hash(state) : 0;
        ad::Var<T> total = objective;
        lv.adv_loss = 0;
        for (auto& p : pairs) {
            p.disc->params.set_requires_grad(false);
            auto la = ad::domain_bce(model::discriminator_forward(*p.disc, p.target_rep), 1);
            const double v = static_cast<double>(la.value()[0]);
            check_finite<T>(v, it, "adv_loss");
            lv.adv_loss += v;
            total = ad::add(total, ad::scale(la, static_cast<T>(cfg.lambda_adv)));
        }
        ad::backward(total);
        sgd_step(gen, state.gen_opt, gen_lr, cfg.gen_momentum, cfg.gen_weight_decay);
        for (auto& p : pairs) p.disc->params.set_requires_grad(true);
        if (opts.verify_isolation && opts.isolation)
            opts.isolation->discriminators_untouched_by_gen_update =
                opts.isolation->discriminators_untouched_by_gen_update && disc_hash(state) == dh;
    };

    if (cfg.disc_first) {
        disc_update();
        gen_update();
    } else {
        gen_update();
        disc_update();
    }
    ++state.iteration;
    return lv;
}

template <typename T>
void save_state(const fs::path& path, const TrainState<T>& s) {
    std::vector<model::TensorRecord> records = model::to_records(s.model.params, "model/");
    if (s.disc_main) {
        auto r = model::to_records(s.disc_main->params, "disc_main/");
        records.insert(records.end(), r.begin(), r.end());
    }
    if (s.disc_depth) {
        auto r = model::to_records(s.disc_depth->params, "disc_depth/");
        records.insert(records.end(), r.begin(), r.end());
    }
    write_tensor_list(records, s.gen_opt.velocity, "opt/gen/velocity/");
    write_tensor_list(records, s.main_opt.m, "opt/main/m/");
    write_tensor_list(records, s.main_opt.v, "opt/main/v/");
    write_tensor_list(records, s.depth_opt.m, "opt/depth/m/");
    write_tensor_list(records, s.depth_opt.v, "opt/depth/v/");
    nlohmann::json header{
        {"kind", "train_state"},
        {"model_config", model::to_json(s.model.config)},
        {"architecture", {{"depth_branch", s.model.arch.depth_branch}, {"feature_fusion", s.model.arch.feature_fusion}}},
        {"train_config", to_json(s.config)},
        {"ablation", {{"name", s.setup.name},
                      {"surp_adapt", s.setup.surp_adapt},
                      {"depth_adapt", s.setup.depth_adapt},
                      {"feat_fusion", s.setup.feat_fusion},
                      {"dada_fusion", s.setup.dada_fusion}}},
        {"iteration", s.iteration},
        {"main_adam_step", s.main_opt.step},
        {"depth_adam_step", s.depth_opt.step},
        {"running_sum", to_json(s.running_sum)},
        {"running_count", s.running_count}};
    model::write_container(path, header, records, std::is_same_v<T, float>);
}

template <typename T>
TrainState<T> load_state(const fs::path& path) {
    nlohmann::json h;
    const auto records = model::read_container(path, h);
    try {
        if (h.at("kind").get<std::string>() != "train_state") throw DataError(path.string() + " is not a training state");
        AblationSetup setup;
        const auto& a = h.at("ablation");
        setup.name = a.at("name").get<std::string>();
        setup.surp_adapt = a.at("surp_adapt").get<bool>();
        setup.depth_adapt = a.at("depth_adapt").get<bool>();
        setup.feat_fusion = a.at("feat_fusion").get<bool>();
        setup.dada_fusion = a.at("dada_fusion").get<bool>();
        auto s = init_train_state<T>(model::model_config_from_json(h.at("model_config")),
                                     train_config_from_json(h.at("train_config")), setup);
        model::assign_records(s.model.params, records, "model/");
        if (s.disc_main) model::assign_records(s.disc_main->params, records, "disc_main/");
        if (s.disc_depth) model::assign_records(s.disc_depth->params, records, "disc_depth/");
        s.gen_opt.velocity = read_tensor_list<T>(records, "opt/gen/velocity/");
        s.main_opt.m = read_tensor_list<T>(records, "opt/main/m/");
        s.main_opt.v = read_tensor_list<T>(records, "opt/main/v/");
        s.depth_opt.m = read_tensor_list<T>(records, "opt/depth/m/");
        s.depth_opt.v = read_tensor_list<T>(records, "opt/depth/v/");
        s.iteration = h.at("iteration").get<std::int64_t>();
        s.main_opt.step = h.at("main_adam_step").get<std::int64_t>();
        s.depth_opt.step = h.at("depth_adam_step").get<std::int64_t>();
        const auto& rs = h.at("running_sum");
        s.running_sum = {rs.at("seg_loss").get<double>(), rs.at("depth_loss").get<double>(),
                         rs.at("source_objective").get<double>(), rs.at("d_loss").get<double>(),
                         rs.at("adv_loss").get<double>()};
        s.running_count = h.at("running_count").get<std::int64_t>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt training state " + path.string() + ": " + e.what());
    }
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t stream, std::int64_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(hash_combine(hash_combine(seed, stream), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
    return order;
}

namespace {

void check_compatible(const synth::Dataset& ds, const model::ModelConfig& mc, const char* role) {
    const auto& s = ds.spec();
    if (s.num_classes != mc.num_classes || s.height != mc.input_height || s.width != mc.input_width)
        throw DataError(std::string(role) + " dataset " + ds.dir().string() + " (" + std::to_string(s.height) + "x" +
                        std::to_string(s.width) + ", C=" + std::to_string(s.num_classes) +
                        ") does not match the model configuration");
}

nlohmann::json snapshot_line(std::int64_t iteration, const LossValues& avg, const metrics::EvalReport* report) {
    nlohmann::json line{{"iteration", iteration}, {"losses", to_json(avg)}};
    if (report) {
        line["target_miou"] = report->miou;
        line["per_class_iou"] = to_json(*report).at("per_class_iou");
    }
    return line;
}

}  // namespace

RunResult run_training(const model::ModelConfig& model_cfg, const TrainConfig& cfg, const AblationSetup& setup,
                       const RunOptions& opts) {
    if (opts.deterministic) Eigen::setNbThreads(1);
    model_cfg.validate();
    cfg.validate();
    setup.validate();
    auto source = synth::Dataset::open(opts.source_dir);
    auto target = synth::Dataset::open(opts.target_dir);
    target.set_annotation_guard(true);
    check_compatible(source, model_cfg, "source");
    check_compatible(target, model_cfg, "target");
    std::optional<synth::Dataset> val;
    if (opts.val_dir) {
        val = synth::Dataset::open(*opts.val_dir);
        check_compatible(*val, model_cfg, "validation");
    }
    std::error_code ec;
    fs::create_directories(opts.out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + opts.out_dir.string() + ": " + ec.message());

    TrainState<float> state = opts.resume_from ? load_state<float>(*opts.resume_from)
                                               : init_train_state<float>(model_cfg, cfg, setup);
    if (opts.resume_from && (!(state.config == cfg) || !(state.model.config == model_cfg)))
        throw ConfigError("resume: stored configuration differs from the requested one");

    const std::size_t n_source = synth::fraction_prefix(source.size(), cfg.source_fraction);
    RunResult result;

    const auto metrics_path = opts.out_dir / "metrics.jsonl";
    std::ofstream metrics_out(metrics_path, opts.resume_from ? std::ios::app : std::ios::trunc);
    if (!metrics_out) throw DataError("cannot write " + metrics_path.string());

    // Snapshots evaluate a frozen copy. In fast mode they run concurrently
    // with training; lines are still written in iteration order.
    std::vector<std::future<nlohmann::json>> pending;
    auto flush = [&](bool all) {
        while (!pending.empty() && (all || pending.front().wait_for(std::chrono::seconds(0)) == std::future_status::ready)) {
            auto line = pending.front().get();
            pending.erase(pending.begin());
            metrics_out << line.dump() << "\n";
            result.metrics.push_back(std::move(line));
        }
    };
    auto snapshot = [&](std::int64_t iteration) {
        LossValues avg;
        if (state.running_count > 0) {
            const double n = static_cast<double>(state.running_count);
            avg = {state.running_sum.seg_loss / n, state.running_sum.depth_loss / n,
                   state.running_sum.source_objective / n, state.running_sum.d_loss / n, state.running_sum.adv_loss / n};
        }
        state.running_sum = {};
        state.running_count = 0;
        auto frozen = state.model;  // deep copy
        auto job = [frozen = std::move(frozen), avg, iteration, &val, subset = opts.subset_classes]() {
            if (!val) return snapshot_line(iteration, avg, nullptr);
            const auto report = metrics::evaluate_model(frozen, *val, std::nullopt, subset);
            return snapshot_line(iteration, avg, &report);
        };
        if (opts.deterministic) {
            pending.push_back(std::async(std::launch::deferred, std::move(job)));
            flush(true);
        } else {
            pending.push_back(std::async(std::launch::async, std::move(job)));
            flush(false);
        }
    };

    const std::int64_t end = opts.stop_after ? std::min(cfg.iterations, state.iteration + *opts.stop_after)
                                             : cfg.iterations;
    std::int64_t src_epoch = -1, tgt_epoch = -1;
    std::vector<std::size_t> src_order, tgt_order;
    while (state.iteration < end) {
        const auto it = state.iteration;
        const auto se = it / static_cast<std::int64_t>(n_source);
        if (se != src_epoch) {
            src_order = epoch_order(cfg.seed, kSourceStream, se, n_source);
            src_epoch = se;
        }
        const auto te = it / static_cast<std::int64_t>(target.size());
        if (te != tgt_epoch) {
            tgt_order = epoch_order(cfg.seed, kTargetStream, te, target.size());
            tgt_epoch = te;
        }
        const auto si = src_order[static_cast<std::size_t>(it % static_cast<std::int64_t>(n_source))];
        const auto ti = tgt_order[static_cast<std::size_t>(it % static_cast<std::int64_t>(target.size()))];
        result.source_indices_touched.insert(si);

        SourceSample sample{source.image(si), source.labels(si), source.inv_depth(si)};
        IsolationCheck iso;
        StepOptions step_opts{opts.verify_isolation, &iso};
        const auto lv = train_step(state, sample, target.image(ti), step_opts);
        if (opts.verify_isolation && !(iso.generator_untouched_by_disc_update &&
                                       iso.generator_grads_empty_after_disc_backward &&
                                       iso.discriminators_untouched_by_gen_update))
            ++result.isolation_failures;
        result.last_losses = lv;
        state.running_sum.seg_loss += lv.seg_loss;
        state.running_sum.depth_loss += lv.depth_loss;
        state.running_sum.source_objective += lv.source_objective;
        state.running_sum.d_loss += lv.d_loss;
        state.running_sum.adv_loss += lv.adv_loss;
        ++state.running_count;
        if (cfg.eval_every > 0 && state.iteration % cfg.eval_every == 0 && state.iteration < cfg.iterations)
            snapshot(state.iteration);
    }
    if (state.iteration >= cfg.iterations) snapshot(state.iteration);
    flush(true);
    metrics_out.flush();
    if (!metrics_out) throw DataError("write failed: " + metrics_path.string());

    if (!state.model.params.all_finite()) throw NumericError("training produced non-finite parameters");
    save_state(opts.out_dir / "state.ckpt", state);
    model::save_model(opts.out_dir / "final.ckpt", state.model);
    result.model = state.model;
    result.target_counters = target.counters();
    return result;
}

#define DADA_INSTANTIATE(T)                                                                                       \
    template TrainState<T> init_train_state<T>(const model::ModelConfig&, const TrainConfig&, const AblationSetup&); \
    template LossValues train_step<T>(TrainState<T>&, const SourceSample&, std::span<const float>,               \
                                      const StepOptions&);                                                        \
    template void save_state<T>(const fs::path&, const TrainState<T>&);                                          \
    template TrainState<T> load_state<T>(const fs::path&);

DADA_INSTANTIATE(float)
DADA_INSTANTIATE(double)

#undef DADA_INSTANTIATE

}  // namespace dada::train
