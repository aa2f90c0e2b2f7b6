#include "synthetic.hpp"

#include "mnistgen/image.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <numeric>

namespace mnistgen::testing {

namespace {

double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void fill_context(RLState& s, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 0.25);
    for (std::size_t i = 0; i < kProjectionDim; ++i) s.features[i] = n(rng);
    s.features[16] = uniform(rng);
    s.features[17] = uniform(rng, 0.0, 0.5);
    s.features[18] = uniform(rng, 0.0, 0.3);
    s.features[20] = uniform(rng);
}

}  // namespace

CurationEnv::CurationEnv(std::uint64_t seed, int episode_length) : rng_(seed), episode_length_(episode_length) {}

RLState CurationEnv::sample_state() {
    RLState s;
    fill_context(s, rng_);
    s.features[19] = uniform(rng_);
    s.features[21] = uniform(rng_);
    return s;
}

CurationAction CurationEnv::optimal_action(const RLState& s) {
    if (s.redundancy() > 0.8) return CurationAction::Discard;
    if (s.confidence() > 0.7) return CurationAction::Keep;
    if (s.confidence() < 0.4) return CurationAction::Discard;
    return CurationAction::Review;
}

double CurationEnv::reward(const RLState& s, CurationAction a) { return a == optimal_action(s) ? 0.9 : -0.1; }

CurationAction CurationEnv::best_by_search(const RLState& s) {
    CurationAction best = CurationAction::Keep;
    for (int a = 1; a < kActionCount; ++a) {
        const auto act = static_cast<CurationAction>(a);
        if (reward(s, act) > reward(s, best)) best = act;
    }
    return best;
}

double optimal_action_rate(const DqnAgent& agent, const std::vector<RLState>& states) {
    std::size_t hits = 0;
    for (const auto& s : states) {
        const auto q = agent.q_values(s);
        const auto a = static_cast<CurationAction>(std::max_element(q.begin(), q.end()) - q.begin());
        hits += a == CurationEnv::best_by_search(s) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(states.size());
}

LearningOutcome train_on_env(std::uint64_t seed, const AgentConfig& config, int max_episodes, double target,
                             int eval_states, int check_every) {
    const auto t0 = std::chrono::steady_clock::now();
    AgentConfig cfg = config;
    cfg.seed = seed;
    DqnAgent agent(cfg);
    CurationEnv env(seed * 7919 + 1);
    CurationEnv held_out(seed * 104729 + 3);
    std::vector<RLState> eval;
    for (int i = 0; i < eval_states; ++i) eval.push_back(held_out.sample_state());

    LearningOutcome out;
    for (int ep = 1; ep <= max_episodes; ++ep) {
        RLState s = env.sample_state();
        for (int t = 0; t < env.episode_length(); ++t) {
            const auto a = agent.act(s, ActMode::Explore);
            const RLState next = env.sample_state();
            const bool terminal = t + 1 == env.episode_length();
            agent.remember({s, a, CurationEnv::reward(s, a), next, terminal});
            if (agent.replay().size() >= cfg.batch_size) agent.train_from_replay();
            s = next;
        }
        out.episodes = ep;
        if (ep % check_every == 0 || ep == max_episodes) {
            out.optimal_rate = optimal_action_rate(agent, eval);
            if (out.optimal_rate >= target) break;
        }
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

std::vector<AblationSample> make_ablation_pool(std::uint64_t seed, std::size_t n, double noise_fraction) {
    std::mt19937_64 rng(seed);
    std::vector<AblationSample> pool(n);
    const auto noisy = static_cast<std::size_t>(noise_fraction * static_cast<double>(n) + 0.5);
    for (std::size_t i = 0; i < n; ++i) {
        auto& p = pool[i];
        p.noise = i < noisy;
        fill_context(p.state, rng);
        // Mislabeled samples score poorly against their assigned subcategory.
        p.state.features[19] = p.noise ? uniform(rng, 0.0, 0.6) : uniform(rng, 0.45, 1.0);
        p.state.features[21] = uniform(rng, 0.0, 0.5);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    return pool;
}

AblationRun run_ablation(std::uint64_t seed, std::size_t n, double noise_fraction) {
    const auto pool = make_ablation_pool(seed, n, noise_fraction);
    AgentConfig cfg;
    cfg.seed = seed;
    cfg.discount = 0.0;
    DqnAgent agent(cfg);
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5ull);

    // Keep/Discard decisions rewarded by the curation reward with a fixed
    // balanced class term and neutral probe accuracy.
    const RewardWeights w;
    for (int pass = 0; pass < 3; ++pass) {
        for (const auto& p : pool) {
            auto a = agent.act(p.state, ActMode::Explore);
            if (a == CurationAction::Review) a = (rng() & 1) ? CurationAction::Keep : CurationAction::Discard;
            const double r = compute_reward_from_entropy(action_confidence(a, p.state.confidence()), 1.0, 0.5,
                                                         p.state.redundancy(), w);
            agent.remember({p.state, a, r, p.state, true});
            if (agent.replay().size() >= cfg.batch_size) agent.train_from_replay();
        }
    }

    AblationRun run;
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    for (const auto& p : pool) {
        const auto q = agent.q_values(p.state);
        if (q[static_cast<int>(CurationAction::Discard)] > q[static_cast<int>(CurationAction::Keep)]) {
            ++run.removed;
            run.rl_noise_removed += p.noise ? 1 : 0;
        }
    }
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < run.removed; ++i) run.random_noise_removed += pool[order[i]].noise ? 1 : 0;
    return run;
}

ClusterFixture make_cluster_fixture(std::uint64_t seed, int clusters, int per_cluster, double noise) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Embedding> centres;
    for (int c = 0; c < clusters; ++c) {
        Embedding e;
        e.values.resize(kEmbeddingDim);
        for (auto& v : e.values) v = n(rng);
        centres.push_back(Embedding::normalized(std::move(e.values)));
    }
    ClusterFixture f;
    for (int c = 0; c < clusters; ++c) {
        for (int k = 0; k < per_cluster; ++k) {
            Embedding e = centres[static_cast<std::size_t>(c)];
            for (auto& v : e.values) v += noise * n(rng);
            f.embeddings.push_back(Embedding::normalized(std::move(e.values)));
            f.labels.push_back(c);
        }
    }
    std::vector<std::size_t> perm(f.embeddings.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ClusterFixture shuffled;
    for (auto i : perm) {
        shuffled.embeddings.push_back(f.embeddings[i]);
        shuffled.labels.push_back(f.labels[i]);
    }
    return shuffled;
}

double gradient_check(std::uint64_t seed, int coords, double h) {
    AgentConfig cfg;
    cfg.seed = seed;
    DqnAgent agent(cfg);
    // Perturb the target so the bootstrap term differs from the online net.
    agent.online().parameter(0) += 0.01;
    std::mt19937_64 rng(seed + 17);
    std::vector<Transition> batch;
    CurationEnv env(seed + 29);
    for (int i = 0; i < 16; ++i) {
        const auto s = env.sample_state();
        const auto a = static_cast<CurationAction>(rng() % kActionCount);
        batch.push_back({s, a, uniform(rng, -0.1, 0.9), env.sample_state(), (rng() & 3) == 0});
    }
    std::vector<double> grads;
    agent.td_loss(batch, &grads);
    Mlp& net = agent.online();
    double worst = 0.0;
    std::uniform_int_distribution<std::size_t> pick(0, net.parameter_count() - 1);
    for (int c = 0; c < coords; ++c) {
        const std::size_t i = pick(rng);
        const double saved = net.parameter(i);
        net.parameter(i) = saved + h;
        const double up = agent.td_loss(batch, nullptr);
        net.parameter(i) = saved - h;
        const double down = agent.td_loss(batch, nullptr);
        net.parameter(i) = saved;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::abs(grads[i]), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(grads[i] - numeric) / denom);
    }
    return worst;
}

std::vector<PoolEntry> pool_from_fixture(const ClusterFixture& f, const CategoryHierarchy& h, double confidence,
                                         std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto& labels = h.labels();
    std::vector<PoolEntry> pool;
    for (std::size_t i = 0; i < f.embeddings.size(); ++i) {
        PoolEntry e;
        e.id = "img" + std::to_string(1000 + i);
        e.embedding = f.embeddings[i];
        e.raw = random_image(rng, 12, 12, 3);
        e.transformed = random_image(rng, 8, 8, 1);
        e.visual = {uniform(rng), uniform(rng, 0, 0.5), uniform(rng, 0, 0.3)};
        const int flat = f.labels[i] % static_cast<int>(labels.size());
        for (const auto& l : labels) {
            ScoreEntry se;
            se.flat_index = l.flat_index;
            se.main_index = l.main_index;
            se.sub_index = l.sub_index;
            se.text_sim = 0.6;
            se.total = l.flat_index == flat ? confidence : confidence * uniform(rng, 0.3, 0.9);
            e.result.breakdown.push_back(se);
        }
        e.result.best_flat = flat;
        e.result.best_main = labels[static_cast<std::size_t>(flat)].main_index;
        e.result.best_sub = labels[static_cast<std::size_t>(flat)].sub_index;
        e.result.confidence = confidence;
        pool.push_back(std::move(e));
    }
    return pool;
}

std::vector<std::filesystem::path> write_image_folder(const std::filesystem::path& dir, int n, std::uint64_t seed) {
    namespace fs = std::filesystem;
    std::mt19937_64 rng(seed);
    fs::create_directories(dir);
    const auto h = tree_template();
    const auto labels = h.labels();
    std::vector<fs::path> out;
    for (int i = 0; i < n; ++i) {
        // Blob on a plain background so the pipeline has something to keep.
        Image img(40, 40, 3);
        const std::uint8_t bg = static_cast<std::uint8_t>(rng() % 64);
        const int cx = 10 + static_cast<int>(rng() % 20), cy = 10 + static_cast<int>(rng() % 20);
        const int r = 5 + static_cast<int>(rng() % 8);
        const std::uint8_t fg[3] = {static_cast<std::uint8_t>(128 + rng() % 128),
                                    static_cast<std::uint8_t>(128 + rng() % 128),
                                    static_cast<std::uint8_t>(rng() % 256)};
        for (int y = 0; y < 40; ++y) {
            for (int x = 0; x < 40; ++x) {
                const bool in = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = in ? fg[c] : bg;
            }
        }
        char name[32];
        std::snprintf(name, sizeof name, "img_%03d.png", i);
        const fs::path p = dir / name;
        save_png(img, p);
        const auto& l = labels[rng() % labels.size()];
        const auto& sub = h.categories()[static_cast<std::size_t>(l.main_index)].subcategories[static_cast<std::size_t>(l.sub_index)];
        std::string hint = rng() % 8 == 0 ? "blurry screenshot of a parking lot"
                                          : l.sub_name + " " + l.main_name + " " + sub.characteristics.front();
        fs::path hp = p;
        hp += ".hint";
        write_text_file(hp, hint);
        out.push_back(p);
    }
    write_text_file(dir / "broken.png", "not a png");
    return out;
}

CommandResult run_command(const std::string& command) {
    namespace fs = std::filesystem;
    static int counter = 0;
    const auto base = fs::temp_directory_path() / ("mnistgen_cmd_" + std::to_string(::getpid()) + "_" +
                                                   std::to_string(counter++));
    const auto out = base.string() + ".out", err = base.string() + ".err";
    const int raw = std::system((command + " >" + out + " 2>" + err).c_str());
    CommandResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = read_text_file(out);
    r.err = read_text_file(err);
    fs::remove(out);
    fs::remove(err);
    return r;
}

DatasetArtifact random_artifact(std::mt19937_64& rng) {
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    DatasetArtifact a;
    a.width = pick(1, 12);
    a.height = pick(1, 12);
    const int n = pick(1, 60);
    const int main_k = pick(1, 5), per_main = pick(1, 4);
    a.images.resize(static_cast<std::size_t>(n) * a.width * a.height);
    for (auto& p : a.images) p = static_cast<std::uint8_t>(rng() & 0xFF);
    for (int i = 0; i < n; ++i) {
        const int m = pick(0, main_k - 1);
        a.main_labels.push_back(static_cast<std::uint8_t>(m));
        a.sub_labels.push_back(static_cast<std::uint8_t>(m * per_main + pick(0, per_main - 1)));
    }
    a.manifest.hierarchy = {{"version", std::to_string(pick(0, 99))}};
    a.manifest.label_map = nlohmann::json::array({pick(0, 9), pick(0, 9)});
    a.manifest.config_hash = sha256_hex(std::to_string(rng()));
    a.manifest.split_ratio = pick(1, 99) / 100.0;
    a.manifest.split_seed = rng();
    a.manifest.created_at = "2024-01-0" + std::to_string(pick(1, 9)) + "T00:00:00Z";
    if (pick(0, 1)) a.manifest.normalization = Normalization{pick(0, 100) / 100.0, pick(1, 100) / 100.0};
    std::vector<int> labels(a.main_labels.begin(), a.main_labels.end());
    a.split = split_dataset(labels, a.manifest.split_ratio, a.manifest.split_seed);
    fill_counts(a, static_cast<std::size_t>(main_k), static_cast<std::size_t>(main_k * per_main));
    return a;
}

Image random_image(std::mt19937_64& rng, int width, int height, int channels) {
    Image img(width, height, channels);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
    return img;
}

Pipeline random_pipeline(std::mt19937_64& rng, const Shape& in, int max_stages, Shape* out) {
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    Shape s = in;
    std::vector<Stage> stages;
    const int n = pick(0, max_stages);
    while (static_cast<int>(stages.size()) < n) {
        const int w = *s.width, h = *s.height, c = *s.channels;
        switch (pick(0, 8)) {
            case 0:
                stages.push_back(stage::SemanticTag{});
                break;
            case 1:
                stages.push_back(stage::BackgroundRemoval{});
                break;
            case 2: {
                const int nw = pick(4, 40), nh = pick(4, 40);
                stages.push_back(stage::Resize{nw, nh});
                s.width = nw;
                s.height = nh;
                break;
            }
            case 3: {
                const int nw = pick(1, w), nh = pick(1, h);
                stages.push_back(stage::CenterCrop{nw, nh});
                s.width = nw;
                s.height = nh;
                break;
            }
            case 4:
                if (c != 3) continue;
                stages.push_back(stage::Grayscale{pick(0, 1) ? stage::GrayMode::Mean : stage::GrayMode::Weighted});
                s.channels = 1;
                break;
            case 5:
                if (c != 1) continue;
                stages.push_back(pick(0, 1) ? stage::Binarize{stage::ThresholdMode::Otsu, 0}
                                            : stage::Binarize{stage::ThresholdMode::Fixed, pick(0, 255)});
                break;
            case 6:
                if (c != 1) continue;
                stages.push_back(stage::Normalize{pick(0, 100) / 100.0, pick(1, 100) / 100.0});
                break;
            case 7:
                stages.push_back(stage::Rotate{static_cast<double>(pick(-8, 8) * 45)});
                break;
            default:
                stages.push_back(stage::ContrastStretch{});
                break;
        }
    }
    if (out) *out = s;
    return Pipeline(std::move(stages), in);
}

}  // namespace mnistgen::testing
