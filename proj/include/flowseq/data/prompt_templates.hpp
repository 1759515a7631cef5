#pragma once

// Judge prompt templates and trait rubrics, kept byte-for-byte as published.
// Trailing spaces on some lines are part of the text.

#include <string_view>

namespace flowseq::prompts {

inline constexpr std::string_view kCohesionTemplate = R"TPL(You are an annotator highly competent in grading English essays. Your task is to grade the following essay, given the topic the essay was written on and a rubric to grade the essay. 

Rubric: {rubric} 
Topic: {topic} 
Essay: {essay} )TPL";

inline constexpr std::string_view kOrganizationTemplate = R"TPL(You are an annotator highly competent in grading English essays. Your task is to grade the following essay, given the prompt used to write the essay and a rubric to grade the essay. Additionally consider that all the essays are anonymized. This means that the named entities (people, places, dates, times, organizations, etc.) are replaced by placeholders (Eg. @NAME1, @LOCATION1, etc.). In addition to this, capitalized phrases are anonymized as @CAP1, @CAP2, etc. These anonymizations should not affect your scoring. You are free to replace the anonymizations with any placeholders.

Rubric: {rubric}
Prompt: {topic}
Essay: {essay})TPL";

inline constexpr std::string_view kCohesionRubric = R"TPL(Cohesion
This property checks how well structured the essay is. 

Score 5: Text organization consistently well controlled using a variety of effective  linguistic features such  as reference and transitional words and phrases to connect ideas across sentences and paragraphs; appropriate  overlap of ideas.

Score 4: Organization generally well controlled; a range of cohesive devices used appropriately such as reference and transitional words and phrases to connect ideas; generally appropriate overlap of ideas.

Score 3: Organization generally controlled; cohesive devices used but limited in type; Some repetitive, mechanical, or faulty use of cohesion use within and/or between sentences and paragraphs.

Score 2: Organization only partially developed with a lack of logical sequencing of ideas; some basic cohesive devices used but with inaccuracy or repetition.

Score 1: No clear control of organization; cohesive devices not present or unsuccessfully used; presentation of ideas unclear.)TPL";

inline constexpr std::string_view kOrganizationRubric = R"TPL(Organization
This property checks how well structured the essay is. NOTE: Since the dataset has the essays compressed into one line, please bear in mind that the paragraph information is lost. Hence, give writers the benefit of the doubt here.

Score 6: The essay is well-organized. There is a clear flow of ideas with each idea self-contained (this is where we assume that each idea is contained in a paragraph). The essay has the appropriate form as a letter to the editor.

Score 5: The essay shows good organization. There is a flow of ideas. However, the ideas are mostly self-contained. The essay has the appropriate form as a letter to the editor. 

Score 4: The essay shows satisfactory organization. It contains a basic introduction, body and conclusion.

Score 3: The essay shows some organization. Its form may not be that of a letter to the editor. Its ideas are not necessarily self-contained.

Score 2: Shows little or no evidence of organization.

Score 1: The essay is awkward and fragmented. Ideas are not self-contained.)TPL";

}  // namespace flowseq::prompts
