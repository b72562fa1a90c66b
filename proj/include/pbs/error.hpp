#pragma once

#include <stdexcept>
#include <string>

namespace pbs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: bad dimensions, negative mask labels, unparsable records.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A pluggable component broke its declared contract (e.g. a scorer out of [0,1]).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class MappingMiss : public Error {
 public:
  MappingMiss(std::string dataset, std::string raw_label)
      : Error("no label mapping for (" + dataset + ", " + raw_label + ")"),
        dataset_(std::move(dataset)),
        raw_label_(std::move(raw_label)) {}

  const std::string& dataset() const { return dataset_; }
  const std::string& raw_label() const { return raw_label_; }

 private:
  std::string dataset_;
  std::string raw_label_;
};

}  // namespace pbs
