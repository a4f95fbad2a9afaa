// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ehrlm {

enum class Errc {
  MissingTable,
  SchemaError,
  ConfigError,
  TemplateError,
  EmptyCorpus,
  DuplicateId,
  VocabError,
  EmptyMask,
  InputError,
  EmptyContent,
  CorruptCheckpoint,
  VersionError,
  FeatureError,
  EmptyEval,
  DegenerateLabels,
  IncompleteTable,
  IoError,
  EndpointError,
  ProtocolError,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::MissingTable: return "MissingTable";
    case Errc::SchemaError: return "SchemaError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::TemplateError: return "TemplateError";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::VocabError: return "VocabError";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::InputError: return "InputError";
    case Errc::EmptyContent: return "EmptyContent";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::VersionError: return "VersionError";
    case Errc::FeatureError: return "FeatureError";
    case Errc::EmptyEval: return "EmptyEval";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::IncompleteTable: return "IncompleteTable";
    case Errc::IoError: return "IoError";
    case Errc::EndpointError: return "EndpointError";
    case Errc::ProtocolError: return "ProtocolError";
  }
  return "Unknown";
}

/// Base of every error raised by the library. Carries the module that raised
/// it and a stable error name so the CLI can report "<module>: <Name>: msg".
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string module, const std::string& message)
      : std::runtime_error(message), code_(code), module_(std::move(module)) {}

  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }
  const std::string& module() const noexcept { return module_; }

 private:
  Errc code_;
  std::string module_;
};

template <Errc C>
class ErrorOf : public Error {
 public:
  ErrorOf(std::string module, const std::string& message)
      : Error(C, std::move(module), message) {}
};

using MissingTable = ErrorOf<Errc::MissingTable>;
using SchemaError = ErrorOf<Errc::SchemaError>;
using ConfigError = ErrorOf<Errc::ConfigError>;
using TemplateError = ErrorOf<Errc::TemplateError>;
using EmptyCorpus = ErrorOf<Errc::EmptyCorpus>;
using DuplicateId = ErrorOf<Errc::DuplicateId>;
using VocabError = ErrorOf<Errc::VocabError>;
using EmptyMask = ErrorOf<Errc::EmptyMask>;
using InputError = ErrorOf<Errc::InputError>;
using EmptyContent = ErrorOf<Errc::EmptyContent>;
using CorruptCheckpoint = ErrorOf<Errc::CorruptCheckpoint>;
using VersionError = ErrorOf<Errc::VersionError>;
using FeatureError = ErrorOf<Errc::FeatureError>;
using EmptyEval = ErrorOf<Errc::EmptyEval>;
using DegenerateLabels = ErrorOf<Errc::DegenerateLabels>;
using IncompleteTable = ErrorOf<Errc::IncompleteTable>;
using IoError = ErrorOf<Errc::IoError>;
using EndpointError = ErrorOf<Errc::EndpointError>;
using ProtocolError = ErrorOf<Errc::ProtocolError>;

}  // namespace ehrlm
