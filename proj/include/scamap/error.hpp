/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace scamap {

/// Error categories, mapped 1:1 onto CLI exit codes.
enum class ErrorKind {
    Config,     // bad configuration or arguments         -> exit 2
    Data,       // missing/corrupt/ill-shaped data        -> exit 3
    Training,   // training diverged (non-finite loss)    -> exit 4
    Evaluation, // evaluation produced no usable result   -> exit 5
    Internal,   // invariant violation inside the toolkit -> exit 1
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string &msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    static Error config(const std::string &msg) { return {ErrorKind::Config, msg}; }
    static Error data(const std::string &msg) { return {ErrorKind::Data, msg}; }
    static Error training(const std::string &msg) { return {ErrorKind::Training, msg}; }
    static Error evaluation(const std::string &msg) { return {ErrorKind::Evaluation, msg}; }
    static Error internal(const std::string &msg) { return {ErrorKind::Internal, msg}; }

  private:
    ErrorKind kind_;
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Training: return 4;
    case ErrorKind::Evaluation: return 5;
    case ErrorKind::Internal: return 1;
    }
    return 1;
}

} // namespace scamap
