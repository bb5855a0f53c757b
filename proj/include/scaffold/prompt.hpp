#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "scaffold/errors.hpp"
#include "scaffold/hashing.hpp"

namespace scaffold {

// Versioned zero-shot prompt asset. Runs record kPromptTemplateVersion and
// prompt_template_hash() so a record can be tied to the exact prompt bytes it
// ran under; bump the version on any byte change.
inline constexpr std::string_view kPromptTemplateVersion = "step-format-v1";

// {Problem} is the single substitution slot. The step delimiter below doubles
// as the generation stop sequence, so one backend call yields one step.
inline constexpr std::string_view kStepDelimiter = "\n\n";

inline constexpr std::string_view kPromptTemplate =
    "<|im_start|>system\n"
    "Solve the following math problem efficiently and clearly:\n"
    "\n"
    "- For simple problems (2 steps or fewer):\n"
    "Provide a concise solution with minimal explanation.\n"
    "\n"
    "- For complex problems (3 steps or more):\n"
    "Use this step-by-step format:\n"
    "\n"
    "## Step 1: [Concise description]\n"
    "[Brief explanation and calculations]\n"
    "\n"
    "## Step 2: [Concise description]\n"
    "[Brief explanation and calculations]\n"
    "\n"
    "...\n"
    "\n"
    "Regardless of the approach, always conclude with:\n"
    "\n"
    "Therefore, the final answer is: $\\boxed{answer}$. I hope it is correct.\n"
    "\n"
    "Where [answer] is just the final number or expression that solves the problem.<|im_end|>\n"
    "\n"
    "<|im_start|>user\n"
    "\n"
    "{Problem}<|im_end|>\n"
    "\n"
    "<|im_start|>assistant\n";

inline std::string prompt_template_hash() { return hex64(fnv1a64(kPromptTemplate)); }

/**
 * Full completion prompt for drafting the next step: the chat-formatted
 * template with the problem substituted, followed by the accepted steps so
 * far, each closed by the step delimiter. With no prior steps the prompt ends
 * at the assistant turn opener.
 */
inline std::string render_prompt(const std::string& problem_statement,
                                 const std::vector<std::string>& prior_steps) {
  static const std::string slot = "{Problem}";
  std::string out(kPromptTemplate);
  std::size_t pos = out.find(slot);
  if (pos == std::string::npos) {
    fail(ErrorCode::INVARIANT_VIOLATION, "prompt template lost its substitution slot");
  }
  out.replace(pos, slot.size(), problem_statement);
  for (const std::string& step : prior_steps) {
    out += step;
    out += kStepDelimiter;
  }
  return out;
}

// Stable identity of a rendered prompt prefix. Scripted tables key on this to
// branch on generation history without storing whole prefixes.
inline std::uint64_t prefix_fingerprint(const std::string& rendered_prompt) {
  return fnv1a64(rendered_prompt);
}

} // namespace scaffold
