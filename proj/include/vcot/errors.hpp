/* Copyright 2026 The vcot Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef VCOT_ERRORS_HPP_
#define VCOT_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vcot {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Malformed box text. `offset`/`length` locate the offending span in the
/// input that was handed to the parser.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset, std::size_t length)
      : Error(what), offset_(offset), length_(length) {}
  std::size_t offset() const { return offset_; }
  std::size_t length() const { return length_; }

 private:
  std::size_t offset_;
  std::size_t length_;
};

/// The model produced box text that could not be turned into a box.
class GroundingFailure : public Error {
 public:
  GroundingFailure(const std::string& what, std::string raw_span,
                   int object_index = -1)
      : Error(what), raw_span_(std::move(raw_span)),
        object_index_(object_index) {}
  const std::string& raw_span() const { return raw_span_; }
  /// Index of the object in a multi-RoI run, -1 otherwise.
  int object_index() const { return object_index_; }

 private:
  std::string raw_span_;
  int object_index_;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace vcot

#endif  // VCOT_ERRORS_HPP_
