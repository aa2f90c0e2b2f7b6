#pragma once

#include "mnistgen/acquisition.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace mnistgen {

inline constexpr std::size_t kEmbeddingDim = 512;

// Unit-norm 512-dimensional vector.
struct Embedding {
    std::vector<double> values;

    static Embedding normalized(std::vector<double> raw);
    double norm() const;
    friend bool operator==(const Embedding&, const Embedding&) = default;
};

double cosine(const Embedding& a, const Embedding& b);
// Cosine rescaled from [-1,1] to [0,1] via (x+1)/2.
double mapped_cosine(const Embedding& a, const Embedding& b);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Embedding embed_text(const std::string& text) = 0;
    virtual Embedding embed_image(const ImageRecord& image) = 0;
    virtual std::vector<Embedding> embed_texts(const std::vector<std::string>& texts);
};

// Deterministic, dependency-free backend. Text is lower-cased and split on
// non-alphanumerics; template stopwords are dropped; each remaining token is
// hashed to a seeded 512-dim Gaussian vector; the token vectors are averaged
// and normalized. Images embed their concept_hint when present, else a
// token derived from a coarse 4x4 colour grid of the pixels.
class StubProvider final : public EmbeddingProvider {
public:
    explicit StubProvider(std::uint64_t seed = 0) : seed_(seed) {}

    Embedding embed_text(const std::string& text) override;
    Embedding embed_image(const ImageRecord& image) override;

    static std::vector<std::string> tokenize(std::string_view text);
    std::vector<double> token_vector(std::string_view token) const;

private:
    std::uint64_t seed_;
};

// Line-oriented full-duplex byte channel to a provider.
class LineTransport {
public:
    virtual ~LineTransport() = default;
    virtual void send_line(const std::string& line) = 0;
    // Returns false on timeout; throws on EOF.
    virtual bool read_line(std::string& line, std::chrono::milliseconds timeout) = 0;
};

// Runs `/bin/sh -c <command>` with stdin/stdout piped.
class ProcessTransport final : public LineTransport {
public:
    explicit ProcessTransport(const std::string& command);
    ~ProcessTransport() override;
    ProcessTransport(const ProcessTransport&) = delete;
    ProcessTransport& operator=(const ProcessTransport&) = delete;

    void send_line(const std::string& line) override;
    bool read_line(std::string& line, std::chrono::milliseconds timeout) override;

private:
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

// Wire protocol, one JSON object per line:
//   request  {"id": u64, "kind": "text"|"image", "payload": text | base64 PNG}
//   response {"id": u64, "embedding": [512 floats]}  or  {"id": u64, "error": "..."}
// Replies may arrive in any order; ids reconcile them. Timeouts and protocol
// violations raise RetryableError.
class ExternalProvider final : public EmbeddingProvider {
public:
    explicit ExternalProvider(std::unique_ptr<LineTransport> transport,
                              std::chrono::milliseconds timeout = std::chrono::seconds(30));

    Embedding embed_text(const std::string& text) override;
    Embedding embed_image(const ImageRecord& image) override;
    std::vector<Embedding> embed_texts(const std::vector<std::string>& texts) override;

    struct Request {
        std::string kind;
        std::string payload;
    };
    std::vector<Embedding> embed_batch(const std::vector<Request>& requests);

private:
    std::unique_ptr<LineTransport> transport_;
    std::chrono::milliseconds timeout_;
    std::uint64_t next_id_ = 1;
    std::mutex mutex_;
};

inline constexpr const char* kProviderCommandEnv = "MNISTGEN_PROVIDER_CMD";

}  // namespace mnistgen
