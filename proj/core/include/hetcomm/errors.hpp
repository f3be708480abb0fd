#pragma once

#include <stdexcept>
#include <string>

namespace hetcomm {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed wire traffic: bad magic/version, unknown message type,
// out-of-contract request payloads.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A frame header promised more bytes than the stream delivered.
class IncompleteFrameError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// Decoded payload violates a data invariant (non-finite tensor values,
// length mismatch).
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition of a pure function.
class InputError : public Error {
 public:
  using Error::Error;
};

// A blocking wait (kv_get, barrier, socket receive) hit its deadline.
class TimeoutError : public Error {
 public:
  using Error::Error;
};

// Socket-level failure: connect refused, peer closed mid-message.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Registration, kv, or barrier could not complete.
class RendezvousError : public Error {
 public:
  using Error::Error;
};

// A collective call failed: tensor length mismatch across ranks, peer
// error, or a timed-out exchange.
class CollectiveError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration is invalid before any worker starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// World setup failed after workers started (config digest mismatch,
// benchmark phase failure, bind failure).
class SetupError : public Error {
 public:
  using Error::Error;
};

// One or more workers of an experiment failed; message carries per-rank
// diagnostics.
class ExperimentError : public Error {
 public:
  using Error::Error;
};

}  // namespace hetcomm
