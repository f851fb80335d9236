#pragma once

namespace fixtures {

struct Fixture {
  const char* text;
  long words, sentences, syllables, chars, difficult;
  double fre, ari, fk, fog, smog, dale_chall;
};

// Word, sentence and character counts by hand; syllables from the CMU
// pronouncing dictionary; difficult words looked up in the shipped list.
// Index values evaluated from those counts with the published formulas.
const Fixture kFixtures[] = {
    {"The cat sat on the mat.", 6, 1, 6, 17, 0,
     116.14500000000001, -5.085000000000001, -1.4499999999999975, 2.4000000000000004, 3.1291, 0.2976},
    {"Hi! Bye.", 2, 2, 2, 5, 0, 121.22000000000003, -9.155, -3.3999999999999986, 0.4, 3.1291, 0.0496},
    {"The committee accepted the proposal after a long discussion.", 9, 1, 18, 51, 4,
     28.50000000000003, 9.760000000000002, 11.520000000000003, 21.37777777777778, 14.554592549557764,
     11.100677777777777},
    {"Doctors reported strange activity near the volcano. Residents were told to leave.", 12, 2, 22, 68,
     5, 45.64500000000001, 8.259999999999998, 8.383333333333336, 15.733333333333334, 11.20814326018867,
     10.513266666666667},
    {"Rain fell all day. The river rose quickly. Families ran to higher ground.", 13, 3, 18, 58, 2,
     85.29820512820513, 1.7505128205128209, 2.4384615384615387, 4.810256410256411, 6.42735559955562,
     6.280664102564103},
    {"The government offers additional funding for public hospitals.", 8, 1, 18, 54, 4,
     8.365000000000009, 14.362500000000004, 14.080000000000002, 18.2, 13.023866798666859, 11.9283},
    {"A small boy found a lost dog in the park.", 10, 1, 10, 31, 0,
     112.08500000000001, -1.8290000000000006, 0.11000000000000121, 4.0, 3.1291, 0.496},
    {"Investors stayed cautious despite encouraging economic indicators.", 7, 1, 20, 59, 6,
     -41.984285714285704, 21.768571428571427, 20.854285714285712, 25.65714285714286, 14.554592549557764,
     17.517985714285714},
    {"She opens the window and listens to the birds singing outside.", 11, 1, 16, 51, 3,
     72.61545454545457, 5.90727272727273, 5.863636363636363, 4.4, 3.1291, 8.488463636363637},
    {"The city will display ancient pottery from many civilizations.", 9, 1, 19, 53, 4,
     19.100000000000023, 10.806666666666665, 12.831111111111113, 12.488888888888889, 11.20814326018867,
     11.100677777777777},
};

}  // namespace fixtures
