#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cbct::app {

// Exit codes of the command-line driver.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitOther = 1;

// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<double> beta;
  std::optional<std::size_t> views_factor;
  std::optional<std::string> out;
};

// Built-in defaults merged with the config file and overrides. The result is
// what every command runs with and what it records beside its outputs.
nlohmann::json resolve_config(const nlohmann::json& file_config, const Overrides& overrides);

// Commands. Each writes under cfg["out_dir"] and records a manifest.
void cmd_simulate(const nlohmann::json& cfg);
void cmd_train(const nlohmann::json& cfg);
void cmd_reconstruct(const nlohmann::json& cfg);
void cmd_evaluate(const nlohmann::json& cfg);

// Parses argv, runs one command and maps errors to exit codes.
int run_cli(int argc, const char* const* argv);

// SHA-256 of a file as lowercase hex.
std::string sha256_file(const std::string& path);

} // namespace cbct::app
