#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "goalfactor/types.hpp"

namespace goalfactor {

// Prompt pairs shipped with the library. The same text lives under
// templates/<name>/{describe,format}.txt.

inline constexpr std::string_view kInspiredDescribe = R"PROMPT(help me analyze the following dialogue between the user and a movie recommender assistant. We are particularly interested in factors that affects what movie should the assistant discuss/recommend in the next response. Pay special attention to the task the current topic and the users' expressed interest in movie.

Here is the interaction log:
<document>

Generate a one sentence description of the dialogue's current state w.r.t. what type of movie to recommend next. what's the users' preference? are any properties of the next movie to discuss known to us?)PROMPT";
inline constexpr std::string_view kInspiredFormat = R"PROMPT(Now, given your inferred current dialogue situation, propose a numbered list of property keywords that the next movie being discussed likely satisfy. E.g., "Romantic Genre", "Comedy Genre", "Features actor X", "Superhero movie", "Dark humor elements", etc. Your numbered list of properties:)PROMPT";

inline constexpr std::string_view kAlfworldDescribe = R"PROMPT(help me analyze the following action log ("input)" of a user. We are particularly interested in factors that affects what the user would do next. Pay special attention to the task the user is given and the users' newest state in the interaction log.

Here is the interaction log:
<document>

Generate a one sentence description of the users' current process w.r.t. completing the given task - what still needs to be accomplished? what's already accomplished? Any nearby objects/utensils that matters for completing the task? what's the user's given task?)PROMPT";
inline constexpr std::string_view kAlfworldFormat = R"PROMPT(Now, given your inferred current user situation, propose a numbered list of property keywords that describes the users' current status w.r.t. task completion, e.g. "already cleaned an item", "a microwave is at current location", "the user is tasked with cleaning an item", "the user needs to find a pot", etc. Your numbered list of properties:)PROMPT";

inline constexpr std::string_view kBillsDescribe = R"PROMPT(help me analyze the following bill summary from U.S. congresses. We are particularly interested in factors that governs the topic this document addresses, e.g. trades, foreign trades, agriculture, etc.

Here is the document:
<document>

Generate a one sentence description of the key topics/directions addressed by this document.)PROMPT";
inline constexpr std::string_view kBillsFormat = R"PROMPT(Now, given your inferred current user situation, propose a numbered list of property keywords that describes the users' current status w.r.t. task completion, e.g. "already cleaned an item", "a microwave is at current location", "the user is tasked with cleaning an item", "the user needs to find a pot", etc. Your numbered list of properties:)PROMPT";

inline std::vector<std::string> bundled_goal_names() { return {"inspired", "alfworld", "bills"}; }

inline Goal bundled_goal(std::string_view name) {
  if (name == "inspired") return Goal::make("inspired", std::string(kInspiredDescribe), std::string(kInspiredFormat));
  if (name == "alfworld") return Goal::make("alfworld", std::string(kAlfworldDescribe), std::string(kAlfworldFormat));
  if (name == "bills") return Goal::make("bills", std::string(kBillsDescribe), std::string(kBillsFormat));
  fail(ErrorCode::kConfig, "unknown bundled goal '" + std::string(name) + "' (expected inspired, alfworld or bills)");
}

}  // namespace goalfactor
