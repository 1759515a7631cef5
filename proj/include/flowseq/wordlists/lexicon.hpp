#pragma once

// Small part-of-speech lexicon backing the rule-based noun tagger, plus the
// irregular-form table of the lemmatizer. Entries are base forms.

#include <string_view>

namespace flowseq::wordlists {

inline constexpr std::string_view kNouns = R"WL(
ability access account action activity adult advantage advice age air amount animal answer
area argument art article attention author baby back bag ball bank bed benefit bird birth
body book boss box boy brain brother budget building business car card care career case cat
cause center chance change character child choice church citizen city class classmate
climate club coach college community company computer concern condition conversation
country couple course court culture cup customer danger data daughter day death decision
degree detail development difference dinner director disease doctor dog door dream
economy education effect effort election energy environment error essay evening event
evidence example exercise experience expert eye face fact family father fear feeling field
figure film floor food foot form freedom friend friendship fun future game garden girl goal
government grade group growth guy hair half hand head health heart help history hobby home
homework hospital hour house idea image impact income industry information interest
internet issue job journey key kid kind kitchen knowledge land language law leader letter
level library life light line list living lot love machine magazine man manager market
material matter meal meaning media medicine meeting member memory message method mind
minute moment money month morning mother mouth movie music name nation nature need network
news newspaper night number office opinion opportunity order paper parent park part party
past patient pay peace people person phone picture piece place plan plant player point
police policy position power practice president price problem process product program
project purpose quality question reader reason record relationship report research
resource respect result right risk road role room rule safety school science screen season
sense service shelf shop side sister situation skill society solution son song sound
source space sport staff stage standard story street student study subject success summer
support system table teacher team technology television term test thing thought time
today tomorrow tool topic town trade tradition training tree trip trouble truth type
understanding university value video view village voice war water way week weekend while
wife window winter woman word work worker world year yesterday youth coordination
censorship teenager offense
)WL";

inline constexpr std::string_view kNonNouns = R"WL(
accept achieve angry hungry lazy tired add affect agree allow appear apply argue arrive ask avoid become begin
believe belong bring build buy call carry catch choose come compare complete consider
contain continue cost create cut decide deliver depend describe destroy develop die discover
discuss draw drink drive eat enjoy enter explain fall feel fight find finish fly follow
forget get give go grow happen hate hear hold hope imagine improve include increase keep
kill know lead learn leave let lie like listen live look lose make mean meet mention miss
move offer open pass perform pick prefer prepare present prevent produce protect provide
pull push put reach read realize receive recognize reduce remain remember remove repeat
reply require return run save say see seem sell send serve set share show sit sleep speak
spend stand start stay stop suggest suppose take talk teach tell tend think throw touch
travel try turn understand use visit wait walk want watch wear win wish wonder worry write
persuade
able bad beautiful best better big black bright busy certain cheap clean clear close cold
common dangerous dark dead deep different difficult dirty early easy effective empty
entire equal false familiar famous fast fat fine free fresh friendly full funny good great
green happy hard healthy heavy high hot huge important impossible interesting large late
long loud low lucky main modern narrow natural near necessary negative new nice normal old
poor popular positive possible powerful pretty private public quick quiet rare ready real
red rich sad safe serious short sick similar simple slow small social soft special strong
sure sweet tall terrible thick thin tiny true ugly useful usual various warm weak white
whole wide wild wise wonderful wrong young offensive faraway local online
always almost already actually really usually sometimes often never maybe perhaps probably
quickly slowly finally easily however therefore instead together especially certainly
clearly simply quite rather soon still even else anyway ago away later far
)WL";

// Pairs of (irregular form, lemma).
inline constexpr std::string_view kIrregularLemmas = R"WL(
am be is be are be was be were be been be being be has have had have does do did do done do
went go gone go goes go made make said say took take taken take came come got get gotten get
gave give given give knew know known know thought think told tell found find felt feel
became become began begin begun begin brought bring bought buy caught catch chose choose
chosen choose drew draw drawn draw drove drive driven drive ate eat eaten eat fell fall
fallen fall fought fight flew fly flown fly forgot forget forgotten forget grew grow grown
grow heard hear held hold kept keep led lead left leave lost lose meant mean met meet paid
pay ran run saw see seen see sold sell sent send sat sit slept sleep spoke speak spoken
speak spent spend stood stand taught teach threw throw thrown throw understood understand
won win wore wear worn wear wrote write written write children child men man women woman
people person feet foot teeth tooth mice mouse lives life knives knife wives wife leaves
leaf better good best good worse bad worst bad
)WL";

}  // namespace flowseq::wordlists
