// Copyright (C) 2026 The mmface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mmface {

// Exit-code families used by the CLI: 1 usage/config, 2 verification, 3 numeric.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class VerificationFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace mmface
