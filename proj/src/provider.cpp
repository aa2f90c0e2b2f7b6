#include "mnistgen/provider.hpp"

#include "mnistgen/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <map>
#include <numbers>
#include <random>
#include <unordered_set>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace mnistgen {

using nlohmann::json;

Embedding Embedding::normalized(std::vector<double> raw) {
    double n = 0.0;
    for (double v : raw) n += v * v;
    n = std::sqrt(n);
    if (!(n > 0.0) || !std::isfinite(n)) throw RetryableError("embedding has zero or non-finite norm");
    for (double& v : raw) v /= n;
    return Embedding{std::move(raw)};
}

double Embedding::norm() const {
    double n = 0.0;
    for (double v : values) n += v * v;
    return std::sqrt(n);
}

double cosine(const Embedding& a, const Embedding& b) {
    if (a.values.size() != b.values.size()) throw UserError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double mapped_cosine(const Embedding& a, const Embedding& b) {
    return (cosine(a, b) + 1.0) / 2.0;
}

std::vector<Embedding> EmbeddingProvider::embed_texts(const std::vector<std::string>& texts) {
    std::vector<Embedding> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_text(t));
    return out;
}

// ---------------------------------------------------------------------------
// Stub provider
// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {"a", "an", "the", "of", "this", "is", "photo",
                                                          "and", "or", "with", "in", "on", "to"};
    return words;
}

}  // namespace

std::vector<std::string> StubProvider::tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty() && !stopwords().contains(cur)) tokens.push_back(cur);
        cur.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

std::vector<double> StubProvider::token_vector(std::string_view token) const {
    // mt19937_64 output is fully specified by the standard; the Gaussian
    // transform is done by hand so vectors are identical across toolchains.
    std::mt19937_64 rng(splitmix64(seed_ ^ splitmix64(fnv1a64(token))));
    auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    std::vector<double> v(kEmbeddingDim);
    for (std::size_t i = 0; i < kEmbeddingDim; i += 2) {
        double r = std::sqrt(-2.0 * std::log(uniform()));
        double theta = 2.0 * std::numbers::pi * uniform();
        v[i] = r * std::cos(theta);
        if (i + 1 < kEmbeddingDim) v[i + 1] = r * std::sin(theta);
    }
    return v;
}

Embedding StubProvider::embed_text(const std::string& text) {
    auto tokens = tokenize(text);
    if (tokens.empty()) tokens.push_back("<empty>");
    std::vector<double> acc(kEmbeddingDim, 0.0);
    for (const auto& t : tokens) {
        auto v = token_vector(t);
        for (std::size_t i = 0; i < kEmbeddingDim; ++i) acc[i] += v[i];
    }
    for (double& a : acc) a /= static_cast<double>(tokens.size());
    return Embedding::normalized(std::move(acc));
}

Embedding StubProvider::embed_image(const ImageRecord& image) {
    if (image.concept_hint) return embed_text(*image.concept_hint);
    const Image& px = image.pixels;
    std::string token = "img";
    for (int gy = 0; gy < 4; ++gy) {
        for (int gx = 0; gx < 4; ++gx) {
            int x0 = gx * px.width / 4, x1 = std::max(x0 + 1, (gx + 1) * px.width / 4);
            int y0 = gy * px.height / 4, y1 = std::max(y0 + 1, (gy + 1) * px.height / 4);
            for (int c = 0; c < px.channels; ++c) {
                std::uint64_t sum = 0, n = 0;
                for (int y = y0; y < y1 && y < px.height; ++y) {
                    for (int x = x0; x < x1 && x < px.width; ++x) {
                        sum += px.at(x, y, c);
                        ++n;
                    }
                }
                token.push_back(static_cast<char>('a' + (n ? sum / n : 0) / 32));
            }
        }
    }
    return Embedding::normalized(token_vector(token));
}

// ---------------------------------------------------------------------------
// Process transport
// ---------------------------------------------------------------------------

ProcessTransport::ProcessTransport(const std::string& command) {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0) throw EnvironmentError("pipe failed: " + std::string(std::strerror(errno)));
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw EnvironmentError("pipe failed: " + std::string(std::strerror(errno)));
    }
    pid_ = fork();
    if (pid_ < 0) throw EnvironmentError("fork failed: " + std::string(std::strerror(errno)));
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    // A provider that dies must surface as an error, not kill us.
    std::signal(SIGPIPE, SIG_IGN);
}

ProcessTransport::~ProcessTransport() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (pid_ > 0) {
        int status = 0;
        // Closing stdin normally ends the provider; give it a moment, then kill.
        for (int i = 0; i < 50; ++i) {
            if (waitpid(pid_, &status, WNOHANG) == pid_) return;
            usleep(10000);
        }
        kill(pid_, SIGKILL);
        waitpid(pid_, &status, 0);
    }
}

void ProcessTransport::send_line(const std::string& line) {
    std::string data = line + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
        ssize_t n = write(to_child_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw RetryableError("provider write failed: " + std::string(std::strerror(errno)));
        }
        off += static_cast<std::size_t>(n);
    }
}

bool ProcessTransport::read_line(std::string& line, std::chrono::milliseconds timeout) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return true;
        }
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) return false;
        pollfd pfd{from_child_, POLLIN, 0};
        int r = poll(&pfd, 1, static_cast<int>(left.count()));
        if (r < 0) {
            if (errno == EINTR) continue;
            throw RetryableError("provider poll failed: " + std::string(std::strerror(errno)));
        }
        if (r == 0) return false;
        char buf[65536];
        ssize_t n = read(from_child_, buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw RetryableError("provider read failed: " + std::string(std::strerror(errno)));
        }
        if (n == 0) throw RetryableError("provider closed its output stream");
        buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

// ---------------------------------------------------------------------------
// External provider
// ---------------------------------------------------------------------------

ExternalProvider::ExternalProvider(std::unique_ptr<LineTransport> transport,
                                   std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout) {
    if (!transport_) throw UserError("external provider needs a transport");
}

std::vector<Embedding> ExternalProvider::embed_batch(const std::vector<Request>& requests) {
    std::lock_guard lock(mutex_);
    std::map<std::uint64_t, std::size_t> pending;
    const std::uint64_t first_id = next_id_;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        std::uint64_t id = next_id_++;
        pending[id] = i;
        json req = {{"id", id}, {"kind", requests[i].kind}, {"payload", requests[i].payload}};
        transport_->send_line(req.dump());
    }
    std::vector<Embedding> out(requests.size());
    while (!pending.empty()) {
        std::string line;
        if (!transport_->read_line(line, timeout_)) {
            throw RetryableError("provider timed out with " + std::to_string(pending.size()) +
                                 " outstanding request(s)");
        }
        json resp;
        try {
            resp = json::parse(line);
        } catch (const json::exception&) {
            throw RetryableError("provider protocol violation: unparseable line");
        }
        if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_unsigned()) {
            throw RetryableError("provider protocol violation: response without id");
        }
        auto id = resp["id"].get<std::uint64_t>();
        // Late replies to an earlier, abandoned batch are dropped.
        if (id < first_id) continue;
        auto it = pending.find(id);
        if (it == pending.end()) {
            throw RetryableError("provider protocol violation: unknown id " + std::to_string(id));
        }
        if (resp.contains("error")) {
            throw RetryableError("provider error for id " + std::to_string(id) + ": " +
                                 resp["error"].dump());
        }
        auto emb = resp.find("embedding");
        if (emb == resp.end() || !emb->is_array() || emb->size() != kEmbeddingDim) {
            throw RetryableError("provider protocol violation: embedding must have 512 entries");
        }
        std::vector<double> values;
        values.reserve(kEmbeddingDim);
        for (const auto& v : *emb) {
            if (!v.is_number()) throw RetryableError("provider protocol violation: non-numeric entry");
            values.push_back(v.get<double>());
        }
        out[it->second] = Embedding::normalized(std::move(values));
        pending.erase(it);
    }
    return out;
}

Embedding ExternalProvider::embed_text(const std::string& text) {
    return embed_batch({{"text", text}}).front();
}

Embedding ExternalProvider::embed_image(const ImageRecord& image) {
    return embed_batch({{"image", base64_encode(encode_png(image.pixels))}}).front();
}

std::vector<Embedding> ExternalProvider::embed_texts(const std::vector<std::string>& texts) {
    std::vector<Request> reqs;
    reqs.reserve(texts.size());
    for (const auto& t : texts) reqs.push_back({"text", t});
    return embed_batch(reqs);
}

}  // namespace mnistgen
