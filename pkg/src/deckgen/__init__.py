"""deckgen: edit-based presentation generation with an offline-replayable provider layer.

The pipeline has two stages: analysis of a reference deck (slide roles,
layout clusters, content schemas) and generation of a new deck by editing
clones of reference slides through a small action language, with bounded
self-correction driven by execution feedback. A metric suite (success rate,
Rouge-L, Frechet distance over layout features, judge-based scoring) closes
the loop.
"""

__version__ = "0.1.0"
