#pragma once

#include <stdexcept>
#include <string>

namespace neuroaudit {

// All library failures derive from Error so callers can separate bad input
// (ConfigError / FormatError) from runtime faults.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file content: archive headers, vocab/merges, JSONL records.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Caller supplied arguments that violate an operation's preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent audit configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A task whose prompts the model does not solve on at least two fills.
class TaskUnusable : public Error {
 public:
  using Error::Error;
};

// The remote annotator could not be reached or has no recorded answer.
class AnnotatorUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace neuroaudit
