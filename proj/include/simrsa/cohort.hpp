#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "simrsa/error.hpp"
#include "simrsa/rng.hpp"

namespace simrsa {

/// One simulated participant. Named identities carry an honorific and a
/// surname; anonymous identities carry neither. The derived seed drives every
/// per-participant random decision (trial order, synthetic persona offset),
/// so reruns and resumes reproduce exactly.
struct Identity {
  std::optional<std::string> honorific;
  std::optional<std::string> surname;
  std::string participant_key;
  std::uint64_t seed = 0;

  bool anonymous() const { return !surname.has_value(); }
};

enum class TaskKind { word_word, image_image, image_description, word_sentence_rating, sentence_ranking };

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::word_word: return "word_word";
    case TaskKind::image_image: return "image_image";
    case TaskKind::image_description: return "image_description";
    case TaskKind::word_sentence_rating: return "word_sentence_rating";
    case TaskKind::sentence_ranking: return "sentence_ranking";
  }
  return "?";
}

inline std::optional<TaskKind> task_from_string(std::string_view s) {
  if (s == "word_word") return TaskKind::word_word;
  if (s == "image_image") return TaskKind::image_image;
  if (s == "image_description") return TaskKind::image_description;
  if (s == "word_sentence_rating") return TaskKind::word_sentence_rating;
  if (s == "sentence_ranking") return TaskKind::sentence_ranking;
  return std::nullopt;
}

/// Template text uses [..] to mark the identity clause that is dropped for
/// anonymous runs, plus {honorific} {surname} and per-task payload
/// placeholders: {wordA} {wordB} {descriptionA} {descriptionB} {sentence}
/// {word} {sentence_block} {sentence_count}.
struct PromptTemplate {
  std::string intro_text;
  std::string trial_text;
  std::string description_text;  // image_description only: the describe-stage prompt
};

namespace templates {

inline constexpr const char* kWordWordIntro =
    R"(Hello, imagine [your name is {honorific} {surname},] you are participating in a psychology experiment. In this experiment, a number of word pairs will be displayed on the screen. Your job is to determine how RELATED each of the word pairs is on a scale from 0 to 100. 100 being very related, 0 being very unrelated. There are a number of possible ways for word pairs to be related. For the purposes of this experiment, please keep the following connections in mind when rating the word pairs:

If the two words mean the same thing, or can be used in similar ways. For example, "boat" and "ship".

If one of the words is a type of the other word. For example, "cat" is a type of animal.

If one of the words is a part of the other word. For example, "bark" is a part of a tree.

If the two words are ones you might use together in a sentence, or that might occur in similar contexts. For example, "river" and "canoe" or, "cook" and "soup."

Please do not use the spellings, or sounds, of words to make your decisions. Even though words rhyme or are spelled similarly, does not mean they are related to one another. This experiment is interested in the relation of word MEANING.)";

inline constexpr const char* kWordWordTrial =
    R"([{honorific} {surname},] please rate how related the two words "{wordA}" and "{wordB}" are on a scale from 0 to 100. 100 being very similar, 0 being very dissimilar. Please respond with just a number.)";

inline constexpr const char* kImageImageIntro =
    R"(Hello, [imagine your name is {honorific} {surname},] you are participating in a psychology experiment. In this experiment you will rate how similar different pairs of images are. Each image depicts a common object. Your job is to determine how SIMILAR each of the image pairs are on a scale from 0 to 100. 100 being very related, 0 being very unrelated. Use the entire range of the scale when making similarity ratings. The images may not be an exact match but could still be quite similar to each other! We are interested in a continuous, overall measure of similarity.)";

inline constexpr const char* kImageImageTrial =
    R"([{honorific} {surname},] please rate how similar the two images are on a scale from 0 to 100. 100 being very similar, 0 being very dissimilar. Please respond with just a number. Use the entire range of the scale when making similarity ratings. The images may not be an exact match but could still be quite similar to each other! We are interested in a continuous, overall measure of similarity.)";

inline constexpr const char* kImageDescriptionIntro =
    R"(Hello, [imagine your name is {honorific} {surname},] you are participating in a psychology experiment. In this experiment, you will describe a number of images and then you will rate how SIMILAR each pair of those images is based on your descriptions. First a number of images will be displayed on the screen and you will describe what you see in each. Next, you will use those descriptions to rate how SIMILAR each pair of those images is on a scale from 0 to 100. 100 being very related, 0 being very unrelated. Use the entire range of the scale when making similarity ratings. The images may not be an exact match but could still be quite similar to eachother! We are interested in a continuous, overall measure of similarity.)";

inline constexpr const char* kImageDescriptionDescribe =
    R"([{honorific} {surname},] please describe this image. Do not include any historical details.)";

inline constexpr const char* kImageDescriptionTrial =
    R"([{honorific} {surname},] please rate how similar the two images described below are on a scale from 0 to 100. 100 being very similar, 0 being very dissimilar. Please respond with just a number. Use the entire range of the scale when making similarity ratings. The images may not be an exact match but could still be quite similar to eachother! We are interested in a continuous, overall measure of similarity.

Description of Image 1: {descriptionA}

Description of Image 2: {descriptionB})";

inline constexpr const char* kWordSentenceIntro =
    R"(Hello, imagine [your name is {honorific} {surname},] you are participating in a psychology experiment. In this experiment, a number of word and sentence pairs will be displayed on the screen. Your job is to determine how RELATED each sentence is to each word on a scale from 0 to 100. 100 being very related, 0 being very unrelated.)";

inline constexpr const char* kWordSentenceTrial =
    R"([{honorific} {surname},] please rate how related the sentence "{sentence}" is to the word "{word}" on a scale from 0 to 100. 100 being very similar, 0 being very dissimilar. Please respond with just a number.)";

inline constexpr const char* kSentenceRankingIntro =
    R"(Hello, imagine [your name is {honorific} {surname},] you are participating in a psychology experiment. In this experiment, a number of words and sentences will be displayed on the screen. Your job is to rank how RELATED the set of sentences is to a target word. For each target word a set of 31 sentences will be displayed. The sentences will be assigned a number. Your job will be to return a list of the sentence numbers in order from most related to target word to least related to the target word.)";

inline constexpr const char* kSentenceRankingTrial =
    R"([{honorific} {surname},] the target word is "{word}". Please rank the following {sentence_count} sentences in order from most related to the target word "{word}" to least related to the target word "{word}".

{sentence_block}

Each sentence was assigned a unique ID number. Please respond only with a list of the sentence ID numbers in order from most related to target word to least related to the target word. Please respond only with a list of numbers. Please include all the presented sentence ID numbers in your response.)";

}  // namespace templates

inline PromptTemplate default_template(TaskKind task) {
  switch (task) {
    case TaskKind::word_word:
      return {templates::kWordWordIntro, templates::kWordWordTrial, ""};
    case TaskKind::image_image:
      return {templates::kImageImageIntro, templates::kImageImageTrial, ""};
    case TaskKind::image_description:
      return {templates::kImageDescriptionIntro, templates::kImageDescriptionTrial,
              templates::kImageDescriptionDescribe};
    case TaskKind::word_sentence_rating:
      return {templates::kWordSentenceIntro, templates::kWordSentenceTrial, ""};
    case TaskKind::sentence_ranking:
      return {templates::kSentenceRankingIntro, templates::kSentenceRankingTrial, ""};
  }
  throw Error("unknown task kind");
}

/// Reads one template text file; a single trailing newline is stripped so
/// file-based templates render identically to the compiled-in defaults.
inline std::string load_template_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open template file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (!text.empty() && text.back() == '\n') text.pop_back();
  if (!text.empty() && text.back() == '\r') text.pop_back();
  return text;
}

/// Builds the cohort of simulated participants. Named mode yields the full
/// surname x honorific cross product in deterministic order; anonymous mode
/// yields `anonymous_repeats` keyed identities with no name. Each identity
/// carries seed = hash(base_seed, participant_key).
inline std::vector<Identity> build_cohort(const std::vector<std::string>& surnames,
                                          const std::vector<std::string>& honorifics,
                                          std::optional<int> anonymous_repeats,
                                          std::uint64_t base_seed) {
  const bool named_input = !surnames.empty() || !honorifics.empty();
  if (anonymous_repeats && named_input)
    throw Error("build_cohort: give either name lists or anonymous_repeats, not both");

  std::vector<Identity> cohort;
  if (anonymous_repeats) {
    if (*anonymous_repeats <= 0) throw Error("build_cohort: anonymous_repeats must be positive");
    for (int i = 0; i < *anonymous_repeats; ++i) {
      Identity id;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "anon_%02d", i);
      id.participant_key = buf;
      id.seed = derive_seed(base_seed, id.participant_key);
      cohort.push_back(std::move(id));
    }
    return cohort;
  }

  if (surnames.empty() || honorifics.empty())
    throw Error("build_cohort: empty cross product (need at least one surname and one honorific)");
  std::set<std::string> keys;
  for (const auto& surname : surnames) {
    for (const auto& honorific : honorifics) {
      Identity id;
      id.honorific = honorific;
      id.surname = surname;
      std::string h = honorific;
      while (!h.empty() && (h.back() == '.' || h.back() == ' ')) h.pop_back();
      id.participant_key = h + "_" + surname;
      if (!keys.insert(id.participant_key).second)
        throw Error("build_cohort: duplicate participant key '" + id.participant_key + "'");
      id.seed = derive_seed(base_seed, id.participant_key);
      cohort.push_back(std::move(id));
    }
  }
  return cohort;
}

namespace detail {

inline void replace_all(std::string& text, std::string_view from, std::string_view to) {
  if (from.empty()) return;
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

/// Applies the bracket rule. With an identity: brackets are removed and the
/// clause kept. Anonymous: each [..] span is dropped; if a span started the
/// string, the first following letter is uppercased; double spaces are
/// collapsed and edges trimmed.
inline std::string render_identity_clauses(std::string_view tmpl, const Identity& identity) {
  std::string out;
  out.reserve(tmpl.size());
  bool dropped_at_start = false;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const char c = tmpl[i];
    if (c == '[') {
      const std::size_t close = tmpl.find(']', i);
      if (close == std::string_view::npos) throw Error("template: unmatched '['");
      if (identity.anonymous()) {
        if (out.empty()) dropped_at_start = true;
      } else {
        out.append(tmpl.substr(i + 1, close - i - 1));
      }
      i = close + 1;
    } else {
      out.push_back(c);
      ++i;
    }
  }
  if (!identity.anonymous()) {
    replace_all(out, "{honorific}", *identity.honorific);
    replace_all(out, "{surname}", *identity.surname);
  }
  // Cleanup: collapse doubled spaces left by elision, trim edges.
  std::string cleaned;
  cleaned.reserve(out.size());
  for (char ch : out) {
    if (ch == ' ' && (cleaned.empty() || cleaned.back() == ' ')) continue;
    cleaned.push_back(ch);
  }
  while (!cleaned.empty() && cleaned.back() == ' ') cleaned.pop_back();
  if (dropped_at_start) {
    for (auto& ch : cleaned) {
      if (std::isalpha(static_cast<unsigned char>(ch))) {
        ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        break;
      }
      if (!std::isspace(static_cast<unsigned char>(ch))) break;
    }
  }
  return cleaned;
}

}  // namespace detail

/// Opaque image payload: the stimulus id plus a pre-encoded data URL. The
/// cohort layer only threads these through; encoding lives in the backend.
struct ImageRef {
  std::string stimulus_id;
  std::string data_url;
};

struct MessageParts {
  std::string text;
  std::vector<ImageRef> attachments;
};

struct WordPairPayload {
  std::string a, b;
};
struct ImagePairPayload {
  ImageRef a, b;
};
struct SingleImagePayload {
  ImageRef image;
};
struct DescriptionPairPayload {
  std::string a, b;
};
struct SentenceForWordPayload {
  std::string sentence;
  std::string word;
};
struct RankingPayload {
  std::string word;
  std::vector<std::pair<int, std::string>> sentences;  // (id, text)
};

using TrialPayload = std::variant<WordPairPayload, ImagePairPayload, SingleImagePayload,
                                  DescriptionPairPayload, SentenceForWordPayload, RankingPayload>;

inline std::string render_intro(const PromptTemplate& tmpl, const Identity& identity) {
  return detail::render_identity_clauses(tmpl.intro_text, identity);
}

inline std::string render_intro(TaskKind task, const Identity& identity) {
  return render_intro(default_template(task), identity);
}

inline MessageParts render_trial(TaskKind task, const PromptTemplate& tmpl, const Identity& identity,
                                 const TrialPayload& payload) {
  MessageParts parts;
  switch (task) {
    case TaskKind::word_word: {
      const auto* p = std::get_if<WordPairPayload>(&payload);
      if (!p) throw Error("word_word trial expects a word pair");
      parts.text = detail::render_identity_clauses(tmpl.trial_text, identity);
      detail::replace_all(parts.text, "{wordA}", p->a);
      detail::replace_all(parts.text, "{wordB}", p->b);
      break;
    }
    case TaskKind::image_image: {
      const auto* p = std::get_if<ImagePairPayload>(&payload);
      if (!p) throw Error("image_image trial expects an image pair");
      parts.text = detail::render_identity_clauses(tmpl.trial_text, identity);
      parts.attachments = {p->a, p->b};
      break;
    }
    case TaskKind::image_description: {
      if (const auto* img = std::get_if<SingleImagePayload>(&payload)) {
        parts.text = detail::render_identity_clauses(tmpl.description_text, identity);
        parts.attachments = {img->image};
      } else if (const auto* d = std::get_if<DescriptionPairPayload>(&payload)) {
        parts.text = detail::render_identity_clauses(tmpl.trial_text, identity);
        detail::replace_all(parts.text, "{descriptionA}", d->a);
        detail::replace_all(parts.text, "{descriptionB}", d->b);
      } else {
        throw Error("image_description trial expects a single image or a description pair");
      }
      break;
    }
    case TaskKind::word_sentence_rating: {
      const auto* p = std::get_if<SentenceForWordPayload>(&payload);
      if (!p) throw Error("word_sentence_rating trial expects (sentence, word)");
      parts.text = detail::render_identity_clauses(tmpl.trial_text, identity);
      detail::replace_all(parts.text, "{sentence}", p->sentence);
      detail::replace_all(parts.text, "{word}", p->word);
      break;
    }
    case TaskKind::sentence_ranking: {
      const auto* p = std::get_if<RankingPayload>(&payload);
      if (!p) throw Error("sentence_ranking trial expects a word plus sentences");
      parts.text = detail::render_identity_clauses(tmpl.trial_text, identity);
      std::string block;
      for (const auto& [id, text] : p->sentences) {
        if (!block.empty()) block += '\n';
        block += "Sentence ID number " + std::to_string(id) + ": " + text;
      }
      detail::replace_all(parts.text, "{sentence_block}", block);
      detail::replace_all(parts.text, "{sentence_count}", std::to_string(p->sentences.size()));
      detail::replace_all(parts.text, "{word}", p->word);
      break;
    }
  }
  return parts;
}

inline MessageParts render_trial(TaskKind task, const Identity& identity, const TrialPayload& payload) {
  return render_trial(task, default_template(task), identity, payload);
}

/// Deterministic per-participant permutation: same run seed and participant
/// key give the same order, distinct participants get distinct orders.
template <typename T>
std::vector<T> shuffle_trials(std::vector<T> items, const Identity& identity) {
  Rng rng(derive_seed(identity.seed, "trial_order"));
  rng.shuffle(items);
  return items;
}

}  // namespace simrsa
