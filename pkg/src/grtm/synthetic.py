"""Small synthetic document networks with known block structure."""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, Document


def _block_words(rng, n_tokens, block, n_blocks, vocab_size, purity):
    width = vocab_size // n_blocks
    own = rng.random(n_tokens) < purity
    words = np.where(own, block * width + rng.integers(0, width, n_tokens), rng.integers(0, vocab_size, n_tokens))
    return words.astype(np.int64)


def _links_from_probs(rng, prob: np.ndarray) -> set:
    hit = rng.random(prob.shape) < prob
    np.fill_diagonal(hit, False)
    return {(int(i), int(j)) for i, j in zip(*np.nonzero(hit))}


def community_network(n_docs: int = 60, vocab_size: int = 20, n_communities: int = 2, doc_length: int = 20,
                      p_within: float = 0.8, p_between: float = 0.01, word_purity: float = 0.9,
                      directed: bool = True, seed=0) -> Corpus:
    """Documents in equal-sized communities with dense within-community links.

    Each community owns a contiguous block of the vocabulary; a token comes
    from the owner's block with probability ``word_purity`` and uniformly
    otherwise.  Document labels hold the community index.
    """
    rng = np.random.default_rng(seed)
    group = np.arange(n_docs) % n_communities
    docs = [Document(f"d{i}", _block_words(rng, doc_length, group[i], n_communities, vocab_size, word_purity),
                     str(group[i])) for i in range(n_docs)]
    same = group[:, None] == group[None, :]
    links = _links_from_probs(rng, np.where(same, p_within, p_between))
    corpus = Corpus(docs, vocab_size, links, directed=True)
    return corpus if directed else corpus.as_undirected()


def cyclic_block_network(n_docs: int = 90, vocab_size: int = 30, n_blocks: int = 3, doc_length: int = 20,
                         p_forward: float = 0.3, p_other: float = 0.01, word_purity: float = 0.9,
                         seed=0) -> Corpus:
    """Directed network where block b mostly cites block (b + 1) mod n_blocks.

    Links are asymmetric by construction: the reverse direction and links
    inside a block are as rare as any other non-forward pair.
    """
    rng = np.random.default_rng(seed)
    block = np.arange(n_docs) % n_blocks
    docs = [Document(f"d{i}", _block_words(rng, doc_length, block[i], n_blocks, vocab_size, word_purity),
                     str(block[i])) for i in range(n_docs)]
    forward = block[None, :] == (block[:, None] + 1) % n_blocks
    links = _links_from_probs(rng, np.where(forward, p_forward, p_other))
    return Corpus(docs, vocab_size, links, directed=True)


def style_community_network(n_docs: int = 120, vocab_size: int = 40, doc_length: int = 30,
                            style_share: float = 0.55, p_within: float = 0.1, p_between: float = 0.002,
                            word_purity: float = 0.95, seed=0) -> Corpus:
    """Sparse network whose links follow a community the words only weakly reveal.

    Every document has a community and an independent "style".  The first
    half of the vocabulary is split between the two styles and the second
    half between the two communities; a share ``style_share`` of each
    document's tokens is drawn from its style block.  Word statistics are
    therefore dominated by style, while links depend on community only.
    """
    rng = np.random.default_rng(seed)
    community = np.arange(n_docs) % 2
    style = rng.permutation(np.arange(n_docs) % 2)
    half = vocab_size // 2
    docs = []
    for i in range(n_docs):
        n_style = rng.binomial(doc_length, style_share)
        style_words = _block_words(rng, n_style, style[i], 2, half, word_purity)
        comm_words = half + _block_words(rng, doc_length - n_style, community[i], 2, vocab_size - half, word_purity)
        docs.append(Document(f"d{i}", np.concatenate([style_words, comm_words]), f"c{community[i]}s{style[i]}"))
    same = community[:, None] == community[None, :]
    links = _links_from_probs(rng, np.where(same, p_within, p_between))
    return Corpus(docs, vocab_size, links, directed=True)


def cora_scale_network(n_docs: int = 2708, vocab_size: int = 1433, n_links: int = 5429, mean_length: float = 18.2,
                       n_groups: int = 7, seed=0) -> Corpus:
    """A corpus with the size statistics of the Cora citation network.

    Binary bag-of-words documents (each word at most once) with topical
    groups and ``n_links`` directed citations, mostly within a group.
    """
    rng = np.random.default_rng(seed)
    group = rng.integers(0, n_groups, n_docs)
    width = vocab_size // n_groups
    docs = []
    for i in range(n_docs):
        n = max(1, rng.poisson(mean_length))
        pool = np.concatenate([group[i] * width + rng.integers(0, width, 2 * n), rng.integers(0, vocab_size, n)])
        words = np.unique(pool)
        words = rng.permutation(words)[:n]
        docs.append(Document(f"p{i}", np.sort(words), str(group[i])))
    links: set = set()
    members = [np.flatnonzero(group == g) for g in range(n_groups)]
    while len(links) < n_links:
        i = int(rng.integers(n_docs))
        if rng.random() < 0.8:
            j = int(rng.choice(members[group[i]]))
        else:
            j = int(rng.integers(n_docs))
        if i != j:
            links.add((i, j))
    return Corpus(docs, vocab_size, links, directed=True)
