#pragma once

// English function words counted as stopwords. Version 1.

#include <string_view>

namespace flowseq::wordlists {

inline constexpr std::string_view kStopwordsVersion = "flowseq-stopwords-v1";

inline constexpr std::string_view kStopwords = R"WL(
a about above after again against all am an and any are as at be because been before being
below between both but by can could did do does doing down during each few for from further
had has have having he her here hers herself him himself his how i if in into is it its
itself just me more most my myself no nor not now of off on once only or other our ours
ourselves out over own same she should so some such than that the their theirs them
themselves then there these they this those through to too under until up very was we were
what when where which while who whom why will with would you your yours yourself yourselves
also may might must shall upon yet ever every either neither cannot
don't doesn't didn't isn't aren't wasn't weren't won't wouldn't can't couldn't shouldn't
i'm you're he's she's it's we're they're i've you've we've they've i'll you'll he'll
she'll we'll they'll i'd you'd he'd she'd we'd they'd that's there's what's let's
)WL";

}  // namespace flowseq::wordlists
