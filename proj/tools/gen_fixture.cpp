// Generates the bundled synthetic evaluation fixture: a filler corpus and 20
// four-turn dialogues in which each dialogue's fact is stated in turn 1 and
// asked back in turns 2-4. Reference answers therefore appear only in prior
// turns of the same dialogue, never in the corpus; the generator verifies
// that separation (token-level disjointness) before writing anything.
//
// The committed files under data/ are this tool's exact output; a unit test
// regenerates them and byte-compares, so the construction stays auditable.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "dhrag/text.hpp"

namespace {

const std::vector<std::string> kEntities = {
    "freedonia", "quuxland",  "zamunda",   "borduria",  "syldavia",
    "latveria",  "elbonia",   "krakozhia", "genosha",   "wakanda",
    "florin",    "guilder",   "grandfenwick", "molvania", "pottsylvania",
    "brutopia",  "carbombya", "kyrzbekistan", "tropico", "agrabah"};

const std::vector<std::string> kRelations = {"capital", "anthem", "currency", "motto", "mascot"};

const std::vector<std::string> kValues = {
    "fredville",  "sunhymn",   "zorkmid",   "everforward", "bluefalcon",
    "doomstadt",  "mudsong",   "snowpeak",  "genocore",    "vibranium",
    "buttercup",  "humperdinck", "fenwick",  "szlonko",     "badenov",
    "moneybags",  "sandstorm", "yakmilk",   "eldorado",    "lampglow"};

// Filler vocabulary. Deliberately avoids every token that appears in the
// dialogue queries and references (the query scaffold words and all
// entity/relation/value names), so a pipeline without history cannot score
// on the fact turns.
const std::vector<std::string> kFillerSubjects = {
    "kettle handles", "copper pans",   "willow baskets", "clay mugs",    "linen cloths",
    "cedar shelves",  "beeswax candles", "pewter spoons", "maple boards", "wool blankets",
    "granite slabs",  "juniper hedges", "barley loaves",  "cider presses", "iron hinges",
    "slate roofs",    "brass lanterns", "oak barrels",    "flax ropes",   "birch canoes",
    "river stones",   "hemp sacks",     "tin whistles",   "alder benches"};

const std::vector<std::string> kFillerPredicates = {
    "gleam brightly near kilns",      "rest neatly inside drawers",
    "dry slowly under rafters",       "hold amber honey jars",
    "line quiet garden pathways",     "keep travellers warm overnight",
    "bake golden every morning",      "crush orchard apples firmly",
    "hang beside workshop doors",     "stack evenly along walls",
    "weather storms without cracking", "carry spring water downhill"};

std::string make_doc_text(std::size_t i) {
  const auto& s1 = kFillerSubjects[i % kFillerSubjects.size()];
  const auto& p1 = kFillerPredicates[i % kFillerPredicates.size()];
  const auto& s2 = kFillerSubjects[(i + 7) % kFillerSubjects.size()];
  const auto& p2 = kFillerPredicates[(i + 5) % kFillerPredicates.size()];
  return s1 + " " + p1 + ". " + s2 + " " + p2 + ".";
}

}  // namespace

int main(int argc, char** argv) {
  std::string out_dir = "data";
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--out-dir" && i + 1 < argc) {
      out_dir = argv[++i];
    } else {
      std::cerr << "usage: dhrag_gen_fixture [--out-dir DIR]\n";
      return 2;
    }
  }
  std::filesystem::create_directories(out_dir);

  const std::size_t doc_count = 24;
  const std::size_t dialogue_count = 20;

  // Corpus.
  std::vector<std::string> doc_texts;
  for (std::size_t i = 0; i < doc_count; ++i) doc_texts.push_back(make_doc_text(i));

  // Dialogues.
  struct Turn {
    std::string query, reference;
    bool history_dependent;
  };
  std::vector<std::vector<Turn>> dialogues;
  for (std::size_t d = 0; d < dialogue_count; ++d) {
    const auto& entity = kEntities[d];
    const auto& relation = kRelations[d % kRelations.size()];
    const auto& value = kValues[d];
    std::string fact = "the " + relation + " of " + entity + " is " + value;
    dialogues.push_back({
        {"remember that " + fact, "understood", false},
        {"what is the " + relation + " of " + entity, fact, true},
        {"tell me the " + relation + " of " + entity + " again", fact, true},
        {"so the " + relation + " of " + entity + " is what", fact, true},
    });
  }

  // The separation property the history-dependence experiments rely on:
  // no corpus token ever appears in a query or reference.
  std::set<std::string> dialogue_tokens;
  for (const auto& dialogue : dialogues) {
    for (const auto& turn : dialogue) {
      for (const auto& tok : dhrag::tokenize(turn.query)) dialogue_tokens.insert(tok);
      for (const auto& tok : dhrag::tokenize(turn.reference)) dialogue_tokens.insert(tok);
    }
  }
  for (const auto& text : doc_texts) {
    for (const auto& tok : dhrag::tokenize(text)) {
      if (dialogue_tokens.count(tok)) {
        std::cerr << "fixture construction broken: corpus token '" << tok
                  << "' also appears in a dialogue\n";
        return 1;
      }
    }
  }

  {
    std::ofstream out(std::filesystem::path(out_dir) / "synthetic_corpus.jsonl", std::ios::binary);
    for (std::size_t i = 0; i < doc_texts.size(); ++i) {
      nlohmann::ordered_json j;
      j["id"] = (i < 10 ? "d0" : "d") + std::to_string(i);
      j["text"] = doc_texts[i];
      j["metadata"] = {{"kind", "filler"}};
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(std::filesystem::path(out_dir) / "synthetic_dialogues.jsonl",
                      std::ios::binary);
    for (std::size_t d = 0; d < dialogues.size(); ++d) {
      nlohmann::ordered_json j;
      j["dialogue_id"] = (d < 10 ? "dlg-0" : "dlg-") + std::to_string(d);
      auto turns = nlohmann::ordered_json::array();
      for (const auto& turn : dialogues[d]) {
        turns.push_back({{"query", turn.query},
                         {"reference_answer", turn.reference},
                         {"history_dependent", turn.history_dependent}});
      }
      j["turns"] = std::move(turns);
      out << j.dump() << "\n";
    }
  }

  std::cout << "wrote " << doc_count << " corpus documents and " << dialogue_count
            << " dialogues to " << out_dir << "\n";
  return 0;
}
