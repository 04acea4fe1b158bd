// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <type_traits>

#include "fedcache/error.hpp"

namespace fedcache {

namespace detail {

template <class E>
[[noreturn]] void rethrow_as(const std::string& stage, const E& e) {
  throw E("stage " + stage + ": " + e.what());
}

}  // namespace detail

template <class Fn>
auto run_stage(const std::string& name, RunManifest* manifest, Fn&& body) -> decltype(body()) {
  const auto start = std::chrono::steady_clock::now();
  const auto done = [&] {
    if (manifest) {
      manifest->stage_done(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
  };
  const auto fail = [&](const std::exception& e) {
    if (manifest) manifest->stage_failed(name, e.what());
  };
  try {
    if constexpr (std::is_void_v<decltype(body())>) {
      body();
      done();
    } else {
      auto value = body();
      done();
      return value;
    }
  } catch (const IoError& e) {
    fail(e);
    detail::rethrow_as(name, e);
  } catch (const FormatError& e) {
    fail(e);
    detail::rethrow_as(name, e);
  } catch (const DataError& e) {
    fail(e);
    detail::rethrow_as(name, e);
  } catch (const ConfigError& e) {
    fail(e);
    detail::rethrow_as(name, e);
  } catch (const NumericError& e) {
    fail(e);
    detail::rethrow_as(name, e);
  } catch (const UsageError& e) {
    fail(e);
    detail::rethrow_as(name, e);
  } catch (const ProtocolError& e) {
    fail(e);
    detail::rethrow_as(name, e);
  } catch (const std::exception& e) {
    fail(e);
    throw Error("stage " + name + ": " + e.what());
  }
}

}  // namespace fedcache
