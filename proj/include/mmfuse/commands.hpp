#ifndef MMFUSE_COMMANDS_HPP_
#define MMFUSE_COMMANDS_HPP_

#include <iosfwd>
#include <string>

#include "mmfuse/config.hpp"

namespace mmfuse {

// Subcommand bodies. They return process exit codes for outcomes that are
// results (gradcheck failure); error conditions surface as typed exceptions
// which the CLI maps to the documented codes.
int cmd_make_corpus(const RunConfig& cfg, std::ostream& console);
int cmd_train(const RunConfig& cfg, std::ostream& console);
int cmd_evaluate(const RunConfig& cfg, std::ostream& console);
int cmd_generate(const RunConfig& cfg, const std::string& instance_id,
                 std::ostream& console);
int cmd_gradcheck(const RunConfig& cfg, bool inject_fault,
                  std::ostream& console);
int cmd_ablate(const RunConfig& cfg, std::ostream& console);

// Exit-code mapping shared by the CLI and the tests.
int exit_code_for(const std::exception& e);

}  // namespace mmfuse

#endif  // MMFUSE_COMMANDS_HPP_
