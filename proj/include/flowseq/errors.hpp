#pragma once

// Exception hierarchy shared by every flowseq module.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowseq {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller passed something the operation's precondition rules out.
struct PreconditionError : Error {
    using Error::Error;
};

struct EmptyInputError : PreconditionError {
    using PreconditionError::PreconditionError;
};

// Input schema does not match the declared column mapping.
struct SchemaError : Error {
    SchemaError(std::string column, const std::string& what)
        : Error(what), column_(std::move(column)) {}
    const std::string& column() const noexcept { return column_; }

private:
    std::string column_;
};

// Row-level data problems. Carries every offending essay id.
struct ValidationError : Error {
    ValidationError(const std::string& what, std::vector<std::string> ids = {})
        : Error(what), ids_(std::move(ids)) {}
    const std::vector<std::string>& essay_ids() const noexcept { return ids_; }

private:
    std::vector<std::string> ids_;
};

struct ConfigError : Error {
    using Error::Error;
};

struct RangeError : Error {
    using Error::Error;
};

struct AlignmentError : Error {
    using Error::Error;
};

// Network failure or timeout talking to an inference endpoint. Safe to retry.
struct TransportError : Error {
    using Error::Error;
};

// Endpoint answered, but not in the shape we need.
struct ProtocolError : Error {
    using Error::Error;
};

struct ContextOverflowError : Error {
    ContextOverflowError(std::size_t tokens, std::size_t limit)
        : Error("context overflow: " + std::to_string(tokens) + " tokens exceeds limit of " +
                std::to_string(limit)),
          tokens_(tokens),
          limit_(limit) {}
    std::size_t tokens() const noexcept { return tokens_; }
    std::size_t limit() const noexcept { return limit_; }

private:
    std::size_t tokens_;
    std::size_t limit_;
};

struct DegenerateLabelError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

// A sentence of an essay failed to score; no aggregate is produced for the essay.
struct SentenceScoringError : Error {
    SentenceScoringError(std::string essay_id, std::size_t index, const std::string& cause)
        : Error("essay " + essay_id + ", sentence " + std::to_string(index) + ": " + cause),
          essay_id_(std::move(essay_id)),
          index_(index) {}
    const std::string& essay_id() const noexcept { return essay_id_; }
    std::size_t sentence_index() const noexcept { return index_; }

private:
    std::string essay_id_;
    std::size_t index_;
};

}  // namespace flowseq
