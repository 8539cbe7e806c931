"""Explicit 2D boundary network: nodes, segments, face labels, and the
topological operators that maintain it (split, collapse, glide, junction
decomposition, degenerate-face absorption, mesh-size enforcement).

Representation
--------------
The network is a half-edge structure stored in flat numpy arrays. Each
undirected segment is a twin pair of half-edges; a half-edge knows its
origin node, twin, next/prev along its face walk, and face label. Faces
are label-only: a face's boundary loops are implied by the half-edge
walks carrying its label, so faces with holes (a grain containing a
particle island) need no extra bookkeeping, and face areas come from a
single vectorized scatter-sum of edge cross products.

Conventions (load-bearing, used by every splice below):
 * grain loops run counter-clockwise, so a face lies to the LEFT of its
   half-edges; the exterior face walks the domain boundary clockwise.
 * around a node, outgoing spokes in CCW order s0, s1, ... satisfy
   ``prev(s_i) == twin(s_{i+1})``; equivalently ``rot(h) =
   twin(prev(h))`` steps CCW to the next spoke.

Node roles: free boundary node (exactly 2 spokes), junction (>= 3),
particle-bound loop node, and immobile Z-node. Domain-wall membership is
a separate bitmask; corner nodes (two wall bits) never move.
"""

import numpy as np

from .geometry import cross2, norm2, project_point_to_segment

# node roles
FREE, JUNCTION, PARTICLE_BOUND, Z_NODE = 0, 1, 2, 3
ROLE_NAMES = {FREE: "free", JUNCTION: "junction",
              PARTICLE_BOUND: "particle_bound", Z_NODE: "z_node"}

# face kinds
EXTERIOR_KIND, GRAIN_KIND, PARTICLE_KIND = 0, 1, 2
EXTERIOR = 0  # fixed face id of the exterior

# wall bitmask
WALL_X0, WALL_X1, WALL_Y0, WALL_Y1 = 1, 2, 4, 8


class NetworkError(Exception):
    pass


class InvalidNetworkError(NetworkError):
    pass


class ZNodeCollapseError(NetworkError):
    """Raised on an attempt to collapse a segment joining two Z-nodes."""


class MeshParams:
    """Remeshing thresholds derived from the target mesh size h (mm).

    c_min/c_max bound admissible segment lengths relative to the target;
    the remaining knobs follow standard front-tracking practice.
    """

    def __init__(self, h, c_min=0.5, c_max=1.5):
        self.h = float(h)
        self.c_min = c_min
        self.c_max = c_max
        self.eps_len = 0.1 * h          # minimum representable segment
        self.a_min = (c_min * h) ** 2   # faces below this area are absorbed
        self.delta_dec = 0.6 * c_min * h  # junction decomposition offset
        self.d_cap = c_min * h          # particle capture distance
        self.glide_relax = 0.5
        self.glide_area_cap = 1e-3 * h * h


class BoundaryNetwork:
    """Planar subdivision of a rectangular domain into grain, particle and
    exterior faces, with mutation operators.

    All mutating operators keep the structure consistent (twin/next/prev
    involutions, face labels, node roles and node_out hints); geometric
    invariants (exterior area, wall positions) are enforced by
    construction and checked by :meth:`validate`.
    """

    _GROW = 1.5

    def __init__(self, domain, mesh: MeshParams):
        self.domain = (float(domain[0]), float(domain[1]))
        self.mesh = mesh

        cap = 64
        # nodes
        self._pos = np.zeros((cap, 2))
        self._role = np.zeros(cap, dtype=np.int8)
        self._nparticle = np.full(cap, -1, dtype=np.int64)
        self._nwall = np.zeros(cap, dtype=np.int8)
        self._nout = np.full(cap, -1, dtype=np.int64)
        self._nalive = np.zeros(cap, dtype=bool)
        self._n_nodes = 0
        self._node_free = []

        # half-edges
        self._horig = np.full(cap, -1, dtype=np.int64)
        self._htwin = np.full(cap, -1, dtype=np.int64)
        self._hnext = np.full(cap, -1, dtype=np.int64)
        self._hprev = np.full(cap, -1, dtype=np.int64)
        self._hface = np.full(cap, -1, dtype=np.int64)
        self._halive = np.zeros(cap, dtype=bool)
        self._n_hes = 0
        self._he_free = []

        # faces
        self._fkind = np.zeros(cap, dtype=np.int8)
        self._falive = np.zeros(cap, dtype=bool)
        self._farea = np.zeros(cap)
        self._ftarget = np.zeros(cap)
        self._fparticle = np.full(cap, -1, dtype=np.int64)
        self._fany = np.full(cap, -1, dtype=np.int64)
        self._n_faces = 0
        self._face_free = []

        # exterior face is always id 0
        f = self.new_face(EXTERIOR_KIND)
        assert f == EXTERIOR

    # ------------------------------------------------------------------
    # allocation

    def _grow(self, arrs, cap):
        new = max(int(cap * self._GROW), cap + 8)
        out = []
        for a in arrs:
            shape = (new,) + a.shape[1:]
            b = np.zeros(shape, dtype=a.dtype)
            if a.dtype == np.int64:
                b.fill(-1)
            b[:cap] = a
            out.append(b)
        return out

    def new_node(self, pos, role=FREE, wall=0, particle=-1):
        if self._node_free:
            n = self._node_free.pop()
        else:
            n = self._n_nodes
            if n >= len(self._nalive):
                (self._pos, self._role, self._nparticle, self._nwall,
                 self._nout, self._nalive) = self._grow(
                    [self._pos, self._role, self._nparticle, self._nwall,
                     self._nout, self._nalive], len(self._nalive))
            self._n_nodes += 1
        self._pos[n] = pos
        self._role[n] = role
        self._nparticle[n] = particle
        self._nwall[n] = wall
        self._nout[n] = -1
        self._nalive[n] = True
        return n

    def kill_node(self, n):
        self._nalive[n] = False
        self._nout[n] = -1
        self._nparticle[n] = -1
        self._node_free.append(n)

    def new_he(self, origin, face):
        if self._he_free:
            h = self._he_free.pop()
        else:
            h = self._n_hes
            if h >= len(self._halive):
                (self._horig, self._htwin, self._hnext, self._hprev,
                 self._hface, self._halive) = self._grow(
                    [self._horig, self._htwin, self._hnext, self._hprev,
                     self._hface, self._halive], len(self._halive))
            self._n_hes += 1
        self._horig[h] = origin
        self._hface[h] = face
        self._htwin[h] = -1
        self._hnext[h] = -1
        self._hprev[h] = -1
        self._halive[h] = True
        if self._fany[face] < 0:
            self._fany[face] = h
        return h

    def kill_he(self, h):
        f = self._hface[h]
        self._halive[h] = False
        if self._fany[f] == h:
            self._fany[f] = -1
        self._horig[h] = -1
        self._he_free.append(h)

    def new_face(self, kind, particle=-1, target=None):
        if self._face_free:
            f = self._face_free.pop()
        else:
            f = self._n_faces
            if f >= len(self._falive):
                (self._fkind, self._falive, self._farea, self._ftarget,
                 self._fparticle, self._fany) = self._grow(
                    [self._fkind, self._falive, self._farea, self._ftarget,
                     self._fparticle, self._fany], len(self._falive))
            self._n_faces += 1
        self._fkind[f] = kind
        self._falive[f] = True
        self._farea[f] = 0.0
        self._ftarget[f] = self.mesh.h if target is None else target
        self._fparticle[f] = particle
        self._fany[f] = -1
        return f

    def kill_face(self, f):
        self._falive[f] = False
        self._fany[f] = -1
        # id deliberately not recycled: grain ids stay unique for stats

    # ------------------------------------------------------------------
    # elementary queries

    def dest(self, h):
        return self._horig[self._htwin[h]]

    def rot(self, h):
        """Next outgoing spoke CCW around origin(h)."""
        return self._htwin[self._hprev[h]]

    def ring(self, n, max_deg=64):
        """Outgoing half-edges around node n in CCW order."""
        h0 = self._nout[n]
        if h0 < 0:
            return []
        out = [h0]
        h = self.rot(h0)
        while h != h0:
            out.append(h)
            if len(out) > max_deg:
                raise InvalidNetworkError(f"unclosed ring at node {n}")
            h = self.rot(h)
        return out

    def degree(self, n):
        return len(self.ring(n))

    def neighbors2(self, n):
        """The two neighbor nodes of a degree-2 node (order: out, prev-side)."""
        h = self._nout[n]
        return self.dest(h), self._horig[self._hprev[h]]

    def alive_hes(self):
        return np.flatnonzero(self._halive[:self._n_hes])

    def segments(self):
        """Canonical segment ids: alive half-edges with id < twin id."""
        hs = self.alive_hes()
        return hs[hs < self._htwin[hs]]

    def seg_nodes(self, s):
        return self._horig[s], self.dest(s)

    def seg_length(self, s):
        a, b = self.seg_nodes(s)
        return float(norm2(self._pos[a] - self._pos[b]))

    def seg_target(self, s):
        return min(self._ftarget[self._hface[s]],
                   self._ftarget[self._hface[self._htwin[s]]])

    def seg_on_particle(self, s):
        return (self._fkind[self._hface[s]] == PARTICLE_KIND
                or self._fkind[self._hface[self._htwin[s]]] == PARTICLE_KIND)

    def alive_nodes(self):
        return np.flatnonzero(self._nalive[:self._n_nodes])

    def alive_faces(self, kind=None):
        fs = np.flatnonzero(self._falive[:self._n_faces])
        if kind is not None:
            fs = fs[self._fkind[fs] == kind]
        return fs

    def grain_count(self):
        return int(np.count_nonzero(
            self._falive[:self._n_faces]
            & (self._fkind[:self._n_faces] == GRAIN_KIND)))

    def face_any_he(self, f):
        h = self._fany[f]
        if h >= 0 and self._halive[h] and self._hface[h] == f:
            return h
        hs = self.alive_hes()
        cand = hs[self._hface[hs] == f]
        if len(cand) == 0:
            return -1
        self._fany[f] = int(cand[0])
        return self._fany[f]

    def face_walk(self, h0):
        """Half-edges of the loop containing h0, in walk order."""
        out = [h0]
        h = self._hnext[h0]
        guard = self._n_hes + 1
        while h != h0:
            out.append(h)
            if len(out) > guard:
                raise InvalidNetworkError("unclosed face walk")
            h = self._hnext[h]
        return out

    def face_hes(self, f):
        hs = self.alive_hes()
        return hs[self._hface[hs] == f]

    # ------------------------------------------------------------------
    # areas and loops

    def refresh_face_areas(self):
        hs = self.alive_hes()
        o = self._horig[hs]
        d = self._horig[self._htwin[hs]]
        contrib = 0.5 * cross2(self._pos[o], self._pos[d])
        self._farea[:self._n_faces] = np.bincount(
            self._hface[hs], weights=contrib, minlength=self._n_faces)[:self._n_faces]
        return self._farea

    def face_area_walk(self, f):
        """Exact signed area of face f summed over all its loops."""
        hs = self.face_hes(f)
        if len(hs) == 0:
            return 0.0
        o = self._horig[hs]
        d = self._horig[self._htwin[hs]]
        return float(0.5 * np.sum(cross2(self._pos[o], self._pos[d])))

    def extract_loops(self):
        """Ordered node loops per face: {face: [[n0, n1, ...], ...]}."""
        loops = {}
        seen = np.zeros(self._n_hes, dtype=bool)
        for h0 in self.alive_hes():
            if seen[h0]:
                continue
            walk = self.face_walk(h0)
            seen[walk] = True
            f = int(self._hface[h0])
            loops.setdefault(f, []).append([int(self._horig[h]) for h in walk])
        return loops

    def grain_areas(self):
        self.refresh_face_areas()
        gs = self.alive_faces(GRAIN_KIND)
        return gs, self._farea[gs].copy()

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def from_polygons(cls, domain, polygons, h):
        """Build a network from CCW grain polygons that tile the domain.

        Polygon vertices must be exact (pre-snapped): shared corners must
        compare equal, and wall vertices must carry exact 0/W/H coords.
        """
        net = cls(domain, MeshParams(h))
        W, H = net.domain
        key2node = {}

        def node_of(p):
            k = (p[0], p[1])
            if k in key2node:
                return key2node[k]
            wall = 0
            if p[0] == 0.0:
                wall |= WALL_X0
            if p[0] == W:
                wall |= WALL_X1
            if p[1] == 0.0:
                wall |= WALL_Y0
            if p[1] == H:
                wall |= WALL_Y1
            n = net.new_node(p, role=FREE, wall=wall)
            key2node[k] = n
            return n

        directed = {}
        for coords in polygons:
            f = net.new_face(GRAIN_KIND)
            ids = [node_of(tuple(p)) for p in coords]
            if len(ids) < 3:
                raise NetworkError("polygon with fewer than 3 vertices")
            hes = [net.new_he(ids[i], f) for i in range(len(ids))]
            for i, hh in enumerate(hes):
                net._hnext[hh] = hes[(i + 1) % len(ids)]
                net._hprev[hh] = hes[(i - 1) % len(ids)]
                a, b = ids[i], ids[(i + 1) % len(ids)]
                if a == b:
                    raise NetworkError("zero-length polygon edge")
                directed[(a, b)] = hh

        # twin matching; unmatched directed edges face the exterior
        ext_out = {}
        for (a, b), hh in directed.items():
            if (b, a) in directed:
                net._htwin[hh] = directed[(b, a)]
            else:
                e = net.new_he(b, EXTERIOR)
                net._htwin[hh] = e
                net._htwin[e] = hh
                if b in ext_out:
                    raise NetworkError("non-manifold domain boundary")
                ext_out[b] = e
        for b, e in ext_out.items():
            a = net._horig[net._htwin[e]]  # e: b -> a
            nxt = ext_out[a]
            net._hnext[e] = nxt
            net._hprev[nxt] = e

        for hh in net.alive_hes():
            n = net._horig[hh]
            if net._nout[n] < 0:
                net._nout[n] = hh
        for n in net.alive_nodes():
            net._update_role(n)
        net.refresh_face_areas()
        return net

    def _update_role(self, n):
        if self._role[n] == Z_NODE:
            return
        deg = self.degree(n)
        if deg >= 3:
            self._role[n] = JUNCTION
        elif self._nparticle[n] >= 0:
            self._role[n] = PARTICLE_BOUND
        else:
            self._role[n] = FREE

    def _fix_out(self, n):
        """Repair node_out after surgery; kills orphans (except Z-nodes)."""
        h = self._nout[n]
        if h >= 0 and self._halive[h] and self._horig[h] == n:
            return True
        hs = self.alive_hes()
        cand = hs[self._horig[hs] == n]
        if len(cand):
            self._nout[n] = int(cand[0])
            return True
        self._nout[n] = -1
        if self._role[n] != Z_NODE:
            self.kill_node(n)
        return False

    def _fix_out_local(self, n, candidates):
        """Like _fix_out but only checks the supplied candidate hes."""
        h = self._nout[n]
        if h >= 0 and self._halive[h] and self._horig[h] == n:
            return True
        for c in candidates:
            if c >= 0 and self._halive[c] and self._horig[c] == n:
                self._nout[n] = c
                return True
        return self._fix_out(n)

    # ------------------------------------------------------------------
    # operator: edge split

    def edge_split(self, s, at=0.5, pos_override=None):
        """Split segment s at parameter ``at``; returns new node id or None.

        The new node lands on the chord, except on particle-interface
        segments where callers pass a circle-projected ``pos_override``.
        Splits that would create a sub-eps_len segment are rejected.
        """
        h = s
        w = self._htwin[h]
        a, b = self._horig[h], self._horig[w]
        pa, pb = self._pos[a], self._pos[b]
        p = pa + at * (pb - pa) if pos_override is None else np.asarray(pos_override, float)
        if norm2(p - pa) <= self.mesh.eps_len or norm2(p - pb) <= self.mesh.eps_len:
            return None

        wall = self._nwall[a] & self._nwall[b]
        part = -1
        if self.seg_on_particle(h):
            fp = self._hface[h] if self._fkind[self._hface[h]] == PARTICLE_KIND \
                else self._hface[w]
            part = self._fparticle[fp]
        m = self.new_node(p, role=PARTICLE_BOUND if part >= 0 else FREE,
                          wall=wall, particle=part)

        hn, wn = self._hnext[h], self._hnext[w]
        f1, f2 = self._hface[h], self._hface[w]
        h2 = self.new_he(m, f1)
        w2 = self.new_he(m, f2)
        # h: a->m, h2: m->b ; w: b->m, w2: m->a
        self._htwin[h], self._htwin[w2] = w2, h
        self._htwin[h2], self._htwin[w] = w, h2
        self._hnext[h], self._hprev[h2] = h2, h
        self._hnext[h2] = hn
        self._hprev[hn] = h2
        self._hnext[w], self._hprev[w2] = w2, w
        self._hnext[w2] = wn
        self._hprev[wn] = w2
        self._nout[m] = h2
        return m

    # ------------------------------------------------------------------
    # operator: node collapse

    _RANK_FREE, _RANK_JUNC, _RANK_PART, _RANK_WALL, _RANK_CORNER, _RANK_Z = range(6)

    def _rank(self, n):
        if self._role[n] == Z_NODE:
            return self._RANK_Z
        wall = int(self._nwall[n])
        if wall:
            two = bin(wall).count("1") >= 2
            return self._RANK_CORNER if two else self._RANK_WALL
        if self._nparticle[n] >= 0:
            return self._RANK_PART
        return self._RANK_JUNC if self._role[n] == JUNCTION else self._RANK_FREE

    def collapse_admissible(self, s):
        """Check collapse preconditions; returns (ok, reason)."""
        h = s
        w = self._htwin[h]
        a, b = self._horig[h], self._horig[w]
        ra, rb = self._rank(a), self._rank(b)
        if ra == self._RANK_Z and rb == self._RANK_Z:
            return False, "z-z"
        if ra == self._RANK_CORNER and rb == self._RANK_CORNER:
            return False, "corner-corner"
        if (ra in (self._RANK_WALL, self._RANK_CORNER)
                and rb in (self._RANK_WALL, self._RANK_CORNER)):
            if not (self._nwall[a] & self._nwall[b]):
                return False, "cross-wall"
        pa, pb = self._nparticle[a], self._nparticle[b]
        if pa >= 0 and pb >= 0 and pa != pb:
            return False, "two-particles"
        if (pa >= 0) != (pb >= 0):
            other = ra if pb >= 0 else rb
            if other in (self._RANK_WALL, self._RANK_CORNER):
                return False, "particle-wall"
        f1, f2 = self._hface[h], self._hface[w]
        # 2-gon faces are fused, not collapsed
        if self._hnext[self._hnext[h]] == h or self._hnext[self._hnext[w]] == w:
            return False, "2-gon"
        # link condition: common incident faces must be exactly {f1, f2}
        fa = {int(self._hface[x]) for x in self.ring(a)}
        fb = {int(self._hface[x]) for x in self.ring(b)}
        if fa & fb != {int(f1), int(f2)}:
            return False, "link"
        return True, ""

    def _collapse_survivor(self, a, b):
        ra, rb = self._rank(a), self._rank(b)
        if ra == rb:
            s, k = (a, b) if a < b else (b, a)
            if ra == self._RANK_PART or ra == self._RANK_WALL or ra == self._RANK_FREE \
                    or ra == self._RANK_JUNC:
                pos = 0.5 * (self._pos[a] + self._pos[b])
            else:
                pos = self._pos[s].copy()
            return s, k, pos
        s, k = (a, b) if ra > rb else (b, a)
        return s, k, self._pos[s].copy()

    def node_collapse(self, s, max_face_check=4):
        """Collapse segment s, merging its endpoints.

        Survivor choice follows the constraint precedence (Z-node >
        corner > wall > particle-bound > junction > free); a Z-Z collapse
        raises, other inadmissible collapses return (None, []). Returns
        (survivor_id, twogon_faces) where twogon_faces are faces left
        with exactly two edges, to be fused by the caller's sweep.
        """
        h = s
        w = self._htwin[h]
        a, b = int(self._horig[h]), int(self._horig[w])
        if self._role[a] == Z_NODE and self._role[b] == Z_NODE:
            raise ZNodeCollapseError(f"segment {s} joins two Z-nodes")
        ok, _reason = self.collapse_admissible(s)
        if not ok:
            return None, []

        surv, kill, pos = self._collapse_survivor(a, b)
        f1, f2 = int(self._hface[h]), int(self._hface[w])

        # area guard: small incident faces must not invert; a triangle
        # face collapsing to a 2-gon must already be near-degenerate
        for f in {int(self._hface[x]) for x in self.ring(a)} | \
                 {int(self._hface[x]) for x in self.ring(b)}:
            if self._fkind[f] == EXTERIOR_KIND:
                continue
            nh = len(self.face_hes(f))
            if f in (f1, f2) and nh == 3:
                if self._fkind[f] == PARTICLE_KIND:
                    return None, []  # keep particle loops >= 3 edges
                if abs(self.face_area_walk(f)) > max_face_check * self.mesh.a_min:
                    return None, []
            elif abs(self._farea[f]) < max_face_check * self.mesh.a_min:
                if self._post_collapse_area(f, a, b, pos) < -1e-18:
                    return None, []

        hp, hn = self._hprev[h], self._hnext[h]
        wp, wn = self._hprev[w], self._hnext[w]
        ring_kill = self.ring(kill)
        self._hnext[hp], self._hprev[hn] = hn, hp
        self._hnext[wp], self._hprev[wn] = wn, wp
        for x in ring_kill:
            if x != h and x != w:
                self._horig[x] = surv
        self.kill_he(h)
        self.kill_he(w)
        # survivor inherits the stronger constraints
        if self._nparticle[kill] >= 0 and self._nparticle[surv] < 0:
            self._nparticle[surv] = self._nparticle[kill]
        self._nwall[surv] |= self._nwall[kill]
        self._pos[surv] = pos
        self.kill_node(kill)
        self._fix_out_local(surv, [hn if self._horig[hn] == surv else -1,
                                   wn if self._horig[wn] == surv else -1]
                            + [x for x in ring_kill if x not in (h, w)])
        self._update_role(surv)

        twogons = []
        for f, probe in ((f1, hp), (f2, wp)):
            if self._halive[probe] and self._hnext[self._hnext[probe]] == probe:
                twogons.append((f, probe))
        return surv, twogons

    def _post_collapse_area(self, f, a, b, pos):
        """Signed area of face f if nodes a, b both moved to pos."""
        h0 = self.face_any_he(f)
        walk = self.face_walk(h0)
        pts = self._pos[self._horig[walk]].copy()
        sel = (self._horig[walk] == a) | (self._horig[walk] == b)
        pts[sel] = pos
        x, y = pts[:, 0], pts[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    # ------------------------------------------------------------------
    # operator: 2-gon fusion

    def fuse_2gon(self, probe):
        """Remove the 2-edge face containing half-edge ``probe``.

        The two parallel segments fuse into one (or vanish entirely when
        both outer sides belong to the same face: needle / island cases).
        Returns the id of the removed face.
        """
        h = probe
        g = self._hnext[h]
        if self._hnext[g] != h:
            raise NetworkError("fuse_2gon on a non-2-gon face")
        f = int(self._hface[h])
        th, tg = self._htwin[h], self._htwin[g]
        f3, f4 = int(self._hface[th]), int(self._hface[tg])
        a, b = int(self._horig[h]), int(self._horig[g])

        if f3 != f4:
            self._htwin[th], self._htwin[tg] = tg, th
            self.kill_he(h)
            self.kill_he(g)
        else:
            dying = {h, g, th, tg}
            for src, dst in ((self._hprev[th], self._hnext[tg]),
                             (self._hprev[tg], self._hnext[th])):
                if src in dying or dst in dying:
                    continue
                self._hnext[src] = dst
                self._hprev[dst] = src
            for x in (h, g, th, tg):
                self.kill_he(x)
        self.kill_face(f)
        for n in (a, b):
            if self._nalive[n] and self._fix_out(n):
                self._update_role(n)
        return f

    # ------------------------------------------------------------------
    # operator: node glide

    def node_glide(self, n):
        """Tangentially relax a free node toward its neighbors' midpoint.

        The node slides along its own two-segment polyline, so enclosed
        areas change by at most the configured cap; junctions, Z-nodes,
        particle-bound and corner nodes never glide. Returns new position.
        """
        if self._role[n] != FREE or bin(int(self._nwall[n])).count("1") >= 2:
            return self._pos[n].copy()
        u, v = self.neighbors2(n)
        pu, pv, p = self._pos[u], self._pos[v], self._pos[n]
        target = p + self.mesh.glide_relax * (0.5 * (pu + pv) - p)
        q1, _ = project_point_to_segment(target, pu, p)
        q2, _ = project_point_to_segment(target, p, pv)
        q = q1 if norm2(target - q1) <= norm2(target - q2) else q2
        # sliver cut off the polyline corner; scale down if over budget
        other = pv if norm2(q - q1) == 0.0 else pu
        sliver = 0.5 * abs(cross2(p - q, other - q))
        cap = self.mesh.glide_area_cap
        if sliver > cap and sliver > 0:
            q = p + (q - p) * (cap / sliver)
        self._pos[n] = q
        return q.copy()

    def glide_all(self):
        """Vectorized glide pass over every free node (Jacobi update)."""
        ns = self.alive_nodes()
        free = ns[(self._role[ns] == FREE) & (self._nout[ns] >= 0)]
        if len(free) == 0:
            return 0
        corner = np.array([bin(int(w)).count("1") >= 2 for w in self._nwall[free]])
        free = free[~corner]
        if len(free) == 0:
            return 0
        out = self._nout[free]
        u = self._horig[self._htwin[out]]
        v = self._horig[self._hprev[out]]
        p, pu, pv = self._pos[free], self._pos[u], self._pos[v]
        target = p + self.mesh.glide_relax * (0.5 * (pu + pv) - p)
        q1, _ = project_point_to_segment(target, pu, p)
        q2, _ = project_point_to_segment(target, p, pv)
        pick1 = norm2(target - q1) <= norm2(target - q2)
        q = np.where(pick1[:, None], q1, q2)
        other = np.where(pick1[:, None], pv, pu)
        sliver = 0.5 * np.abs(cross2(p - q, other - q))
        cap = self.mesh.glide_area_cap
        scale = np.where(sliver > cap, cap / np.maximum(sliver, 1e-300), 1.0)
        self._pos[free] = p + (q - p) * scale[:, None]
        return len(free)

    # ------------------------------------------------------------------
    # operator: junction decomposition

    def decompose_junction(self, n):
        """Split a quadruple-or-higher junction into triple junctions.

        Adjacent spoke pairs are peeled onto a new node offset by
        delta_dec along the pair's bisector; among admissible pairings
        the one minimizing total local boundary length wins, ties broken
        by the lowest separated face id. Wall junctions keep their wall
        spokes (and wall position). Returns new junction node ids.
        """
        if self._role[n] != JUNCTION or self._nparticle[n] >= 0 \
                or self._role[n] == Z_NODE:
            return []
        created = []
        while True:
            spokes = self.ring(n)
            if len(spokes) < 4:
                break
            on_wall = int(self._nwall[n]) != 0
            pn = self._pos[n]
            best = None
            k = len(spokes)
            for i in range(k):
                sa, sb = spokes[i], spokes[(i + 1) % k]
                if on_wall and (self._hface[self._htwin[sa]] == EXTERIOR
                                or self._hface[sa] == EXTERIOR
                                or self._hface[self._htwin[sb]] == EXTERIOR
                                or self._hface[sb] == EXTERIOR):
                    continue  # wall spokes stay with the wall node
                fa = int(self._hface[self._htwin[sa]])
                fb = int(self._hface[sb])
                if fa == fb:
                    continue  # would create a same-face edge (pinch)
                ta = self._pos[self.dest(sa)] - pn
                tb = self._pos[self.dest(sb)] - pn
                d = _bisector(ta, tb)
                delta = self.mesh.delta_dec
                if on_wall:
                    pu = pn + delta * d
                    pn2 = pn
                else:
                    pu = pn + 0.5 * delta * d
                    pn2 = pn - 0.5 * delta * d
                cost = delta
                for j in range(k):
                    tgt = pu if j in (i, (i + 1) % k) else pn2
                    cost += float(norm2(self._pos[self.dest(spokes[j])] - tgt))
                key = (cost, min(fa, fb), sa)
                if best is None or key < best[0]:
                    best = (key, i, pu, pn2)
            if best is None:
                break
            _, i, pu, pn2 = best
            sa, sb = spokes[i], spokes[(i + 1) % k]
            u = self._split_pair_off(n, sa, sb, pu, with_edge=True)
            self._pos[n] = pn2
            created.append(u)
            self._update_role(n)
            self._update_role(u)
        return created

    def _split_pair_off(self, n, sa, sb, pos_u, with_edge):
        """Move CCW-adjacent spoke pair (sa, sb=rot(sa)) onto a new node.

        With ``with_edge`` a connecting segment n-u is created (junction
        decomposition); without, the walks are cross-linked, which is only
        legal when both flanking wedges carry the same face (pinch split,
        used by particle unpinning). Returns the new node id.
        """
        assert self.rot(sa) == sb
        fa_out = int(self._hface[self._htwin[sa]])
        fb_in = int(self._hface[sb])
        tsa = self._htwin[sa]
        old_prev_sb = self._hprev[sb]
        old_next_tsa = self._hnext[tsa]
        part = self._nparticle[n]
        u = self.new_node(pos_u, role=FREE, wall=0,
                          particle=part if not with_edge else -1)
        self._horig[sa] = u
        self._horig[sb] = u
        if with_edge:
            assert fa_out != fb_in
            A = self.new_he(n, fb_in)   # n -> u, face between sb-side
            B = self.new_he(u, fa_out)  # u -> n, face on twin(sa) side
            self._htwin[A], self._htwin[B] = B, A
            self._hnext[A], self._hprev[sb] = sb, A
            self._hnext[tsa], self._hprev[B] = B, tsa
            self._hnext[B] = old_next_tsa
            self._hprev[old_next_tsa] = B
            self._hnext[old_prev_sb] = A
            self._hprev[A] = old_prev_sb
            self._nout[n] = A
        else:
            assert fa_out == fb_in
            self._hnext[tsa] = sb
            self._hprev[sb] = tsa
            self._hnext[old_prev_sb] = old_next_tsa
            self._hprev[old_next_tsa] = old_prev_sb
            self._fix_out_local(n, [self._htwin[old_prev_sb]])
        self._nout[u] = sa
        self._update_role(u)
        return u

    def pinch_split(self, n, sa, pos_u, particle=-1):
        """Split node n by peeling spoke pair (sa, rot(sa)) onto a new
        node at pos_u without a connecting edge (same-face flanks)."""
        sb = self.rot(sa)
        u = self._split_pair_off(n, sa, sb, pos_u, with_edge=False)
        self._nparticle[u] = particle
        self._update_role(u)
        self._update_role(n)
        return u

    # ------------------------------------------------------------------
    # operator: merge a boundary node onto a constraint node (capture)

    def node_merge(self, n, p):
        """Merge node n (free/junction, unconstrained) onto node p.

        n's CCW spoke fan is spliced into the wedge of p facing n whose
        face matches the fan's outer face; used for particle capture
        (p = loop node) and Z-node capture (p possibly isolated).
        Returns True on success, False if no compatible wedge exists.
        """
        fan = self.ring(n)
        if not fan:
            return False
        ring_p = self.ring(p)
        if not ring_p:
            # isolated target (unattached Z-node): fan transfers wholesale
            for x in fan:
                self._horig[x] = p
            self._nout[p] = fan[0]
            self.kill_node(n)
            self._update_role(p)
            return True

        fan_faces = [int(self._hface[x]) for x in fan]
        d = self._pos[n] - self._pos[p]
        chosen = None
        for a1 in ring_p:
            a2 = self.rot(a1)
            wface = int(self._hface[a1])
            if self._fkind[wface] != GRAIN_KIND:
                continue
            rotations = [r for r in range(len(fan)) if fan_faces[r] == wface]
            if not rotations:
                continue
            t1 = self._pos[self.dest(a1)] - self._pos[p]
            t2 = self._pos[self.dest(a2)] - self._pos[p]
            contains = _wedge_contains(t1, t2, d)
            for r in rotations:
                key = (0 if contains else 1, a1, r)
                if chosen is None or key < chosen[0]:
                    chosen = (key, a1, a2, r)
        if chosen is None:
            return False
        _, a1, a2, r = chosen
        # rotate fan so its last spoke's wedge face matches the target wedge
        fan = fan[r + 1:] + fan[:r + 1]
        t1, tk = fan[0], fan[-1]
        for x in fan:
            self._horig[x] = p
        tw_t1, tw_a2 = self._htwin[t1], self._htwin[a2]
        self._hprev[a1] = tw_t1
        self._hnext[tw_t1] = a1
        self._hprev[tk] = tw_a2
        self._hnext[tw_a2] = tk
        self.kill_node(n)
        self._update_role(p)
        return True

    # ------------------------------------------------------------------
    # operator: remove a degree-2 node, fusing its two segments

    def detach_degree2(self, z):
        """Release a degree-2 node from its chain: segments z-a and z-b
        are replaced by a direct segment a-b; z keeps its position and
        becomes isolated. Used for Z-node unpinning. Returns the new
        canonical segment id, or None if the local configuration forbids
        it (2-gon, or flanks carrying the same face)."""
        spokes = self.ring(z)
        if len(spokes) != 2:
            return None
        s1, s2 = spokes
        if self._hface[s1] == self._hface[s2]:
            return None
        a, b = self.dest(s1), self.dest(s2)
        if a == b:
            return None
        w1, w2 = self._htwin[s1], self._htwin[s2]
        fA, fB = int(self._hface[w1]), int(self._hface[w2])
        A2 = self.new_he(a, fA)
        B2 = self.new_he(b, fB)
        self._htwin[A2], self._htwin[B2] = B2, A2
        pw1, ns2 = self._hprev[w1], self._hnext[s2]
        pw2, ns1 = self._hprev[w2], self._hnext[s1]
        self._hnext[pw1], self._hprev[A2] = A2, pw1
        self._hnext[A2], self._hprev[ns2] = ns2, A2
        self._hnext[pw2], self._hprev[B2] = B2, pw2
        self._hnext[B2], self._hprev[ns1] = ns1, B2
        for x in (s1, s2, w1, w2):
            self.kill_he(x)
        self._nout[z] = -1
        for nn in (a, b):
            self._fix_out_local(nn, [A2 if nn == a else B2])
            self._update_role(nn)
        return min(A2, B2)

    # ------------------------------------------------------------------
    # operator: degenerate-face absorption

    def absorb_face(self, f, target=None):
        """Dissolve face f into a neighboring grain face.

        The target (largest shared-perimeter grain neighbor by default,
        ties by lowest id) takes over: f's other edges are relabeled,
        edges shared with the target are deleted, orphaned plain nodes
        are removed and affected roles updated. The absorbed region's
        area transfers exactly. Returns the absorbing face id or None.
        """
        hs = self.face_hes(f)
        if len(hs) == 0:
            self.kill_face(f)
            return None
        if target is None:
            shared = {}
            for x in hs:
                g = int(self._hface[self._htwin[x]])
                if self._fkind[g] != GRAIN_KIND:
                    continue
                a, b = self._horig[x], self.dest(x)
                shared[g] = shared.get(g, 0.0) + float(
                    norm2(self._pos[a] - self._pos[b]))
            if not shared:
                return None
            best = max(shared.items(), key=lambda kv: (kv[1], -kv[0]))
            target = best[0]

        touched = set()
        dissolve = []
        for x in sorted(int(v) for v in hs):
            if not self._halive[x] or self._hface[x] != f:
                continue
            tw = self._htwin[x]
            touched.add(int(self._horig[x]))
            touched.add(int(self._horig[tw]))
            if self._hface[tw] == target:
                dissolve.append(x)
            else:
                self._hface[x] = target
                if self._fany[target] < 0:
                    self._fany[target] = x
        for x in dissolve:
            if not self._halive[x]:
                continue
            tw = self._htwin[x]
            dying = {x, tw}
            for src, dst in ((self._hprev[x], self._hnext[tw]),
                             (self._hprev[tw], self._hnext[x])):
                if src in dying or dst in dying:
                    continue
                self._hnext[src] = dst
                self._hprev[dst] = src
            self.kill_he(x)
            self.kill_he(tw)
        self.kill_face(f)
        for nn in sorted(touched):
            if self._nalive[nn] and self._fix_out(nn):
                self._update_role(nn)
        return target

    def remove_degenerate_faces(self):
        """Absorb grain faces below the minimum area or with < 3 edges.

        Returns the list of removed grain ids.
        """
        removed = []
        for _ in range(8):
            self.refresh_face_areas()
            gs = self.alive_faces(GRAIN_KIND)
            if len(gs) <= 1:
                break
            counts = np.bincount(
                self._hface[self.alive_hes()], minlength=self._n_faces)
            cand = gs[(self._farea[gs] < self.mesh.a_min) | (counts[gs] < 3)]
            if len(cand) == 0:
                break
            progress = False
            for f in sorted(int(v) for v in cand):
                if not self._falive[f] or self.grain_count() <= 1:
                    continue
                if self.absorb_face(f) is not None:
                    removed.append(f)
                    progress = True
            if not progress:
                break
        return removed

    # ------------------------------------------------------------------
    # operator: mesh-size enforcement

    def enforce_mesh_size(self, project_fn=None):
        """Split over-long and collapse under-short segments until every
        segment length lies within [c_min, c_max] of its target (h for
        grain boundaries and walls, the particle's h_p on its loop).

        ``project_fn(particle_id, position) -> position`` projects new
        particle-loop nodes onto the ideal circle. Idempotent once the
        bounds hold. Returns (splits, collapses).
        """
        c_min, c_max = self.mesh.c_min, self.mesh.c_max
        n_split = n_coll = 0
        for _ in range(32):
            ops = 0
            # split pass
            segs = self.segments()
            if len(segs) == 0:
                break
            tgt = np.minimum(self._ftarget[self._hface[segs]],
                             self._ftarget[self._hface[self._htwin[segs]]])
            o, d = self._horig[segs], self._horig[self._htwin[segs]]
            ln = norm2(self._pos[d] - self._pos[o])
            for s in segs[ln > c_max * tgt]:
                s = int(s)
                queue = [s]
                while queue:
                    q = queue.pop()
                    if not self._halive[q]:
                        continue
                    t = self.seg_target(q)
                    if self.seg_length(q) <= c_max * t:
                        continue
                    override = None
                    if project_fn is not None and self.seg_on_particle(q):
                        a, b = self.seg_nodes(q)
                        fp = self._hface[q] if self._fkind[self._hface[q]] == PARTICLE_KIND \
                            else self._hface[self._htwin[q]]
                        mid = 0.5 * (self._pos[a] + self._pos[b])
                        override = project_fn(int(self._fparticle[fp]), mid)
                    m = self.edge_split(q, 0.5, pos_override=override)
                    if m is None:
                        continue
                    ops += 1
                    n_split += 1
                    queue.append(q)
                    queue.append(int(self._hnext[q]))
            # collapse pass
            segs = self.segments()
            tgt = np.minimum(self._ftarget[self._hface[segs]],
                             self._ftarget[self._hface[self._htwin[segs]]])
            o, d = self._horig[segs], self._horig[self._htwin[segs]]
            ln = norm2(self._pos[d] - self._pos[o])
            mask = ln < c_min * tgt
            order = np.argsort(ln[mask], kind="stable")
            for s in segs[mask][order]:
                s = int(s)
                if not self._halive[s]:
                    continue
                if self.seg_length(s) >= c_min * self.seg_target(s):
                    continue
                a, b = self.seg_nodes(s)
                if (self._role[a] == JUNCTION and self._role[b] == JUNCTION
                        and self._nparticle[a] >= 0
                        and self._nparticle[a] == self._nparticle[b]):
                    continue  # pinned junction pairs merge only via unpinning
                if self._role[a] == Z_NODE and self._role[b] == Z_NODE:
                    continue
                surv, twogons = self.node_collapse(s)
                if surv is None:
                    continue
                ops += 1
                n_coll += 1
                if self._nparticle[surv] >= 0 and project_fn is not None:
                    self._pos[surv] = project_fn(int(self._nparticle[surv]),
                                                 self._pos[surv])
                for _f, probe in twogons:
                    if self._halive[probe] and \
                            self._hnext[self._hnext[probe]] == probe:
                        self.fuse_2gon(probe)
            if ops == 0:
                break
        return n_split, n_coll

    # ------------------------------------------------------------------
    # validity

    def validate(self, particles=None, full=True):
        """Raise InvalidNetworkError on any structural/geometric breach."""
        hs = self.alive_hes()
        if len(hs) == 0:
            return
        tw, nx, pv = self._htwin[hs], self._hnext[hs], self._hprev[hs]
        for name, arr in (("twin", tw), ("next", nx), ("prev", pv)):
            if not np.all(self._halive[arr]):
                raise InvalidNetworkError(f"dead {name} pointer")
        if not np.all(self._htwin[tw] == hs):
            raise InvalidNetworkError("twin not involutive")
        if np.any(tw == hs):
            raise InvalidNetworkError("self-twin")
        if not np.all(self._hprev[nx] == hs) or not np.all(self._hnext[pv] == hs):
            raise InvalidNetworkError("next/prev not inverse")
        if not np.all(self._horig[nx] == self._horig[tw]):
            raise InvalidNetworkError("walk discontinuity")
        if not np.all(self._hface[nx] == self._hface[hs]):
            raise InvalidNetworkError("face label changes along walk")
        if np.any(self._hface[tw] == self._hface[hs]):
            raise InvalidNetworkError("segment with identical face on both sides")
        if not np.all(self._nalive[self._horig[hs]]):
            raise InvalidNetworkError("dead origin")
        if not np.all(self._falive[self._hface[hs]]):
            raise InvalidNetworkError("dead face label")
        o, d = self._horig[hs], self._horig[tw]
        if np.any(o == d):
            raise InvalidNetworkError("self-loop segment")
        ln = norm2(self._pos[d] - self._pos[o])
        if np.any(ln <= 0.0):
            raise InvalidNetworkError("zero-length segment")

        ns = self.alive_nodes()
        deg = np.bincount(o, minlength=self._n_nodes)[ns]
        bad = ns[(deg == 1)]
        if len(bad):
            raise InvalidNetworkError(f"dangling node {bad[:5]}")
        iso = ns[(deg == 0) & (self._role[ns] != Z_NODE)]
        if len(iso):
            raise InvalidNetworkError(f"isolated non-Z node {iso[:5]}")
        for n in ns[deg >= 2]:
            out = self._nout[n]
            if out < 0 or not self._halive[out] or self._horig[out] != n:
                raise InvalidNetworkError(f"bad node_out at {n}")
        free_bad = ns[(self._role[ns] == FREE) & (deg != 2) & (deg > 0)]
        if len(free_bad):
            raise InvalidNetworkError(f"free node with degree != 2: {free_bad[:5]}")
        junc_bad = ns[(self._role[ns] == JUNCTION) & (deg < 3)]
        if len(junc_bad):
            raise InvalidNetworkError(f"junction with degree < 3: {junc_bad[:5]}")

        W, H = self.domain
        pos = self._pos[ns]
        for bit, idx, val in ((WALL_X0, 0, 0.0), (WALL_X1, 0, W),
                              (WALL_Y0, 1, 0.0), (WALL_Y1, 1, H)):
            on = ns[(self._nwall[ns] & bit) != 0]
            if len(on) and np.max(np.abs(self._pos[on, idx] - val)) > 1e-12:
                raise InvalidNetworkError("wall node off its wall")
        if np.any(pos[:, 0] < -1e-12) or np.any(pos[:, 0] > W + 1e-12) \
                or np.any(pos[:, 1] < -1e-12) or np.any(pos[:, 1] > H + 1e-12):
            raise InvalidNetworkError("node outside domain")

        self.refresh_face_areas()
        ext = self._farea[EXTERIOR]
        if abs(ext + W * H) > 1e-9 * W * H:
            raise InvalidNetworkError(f"exterior loop area drifted: {ext}")

        if particles is not None:
            for nn in ns[self._nparticle[ns] >= 0]:
                p = particles[int(self._nparticle[nn])]
                if p.mode == "discretized" and p.active:
                    r = float(norm2(self._pos[nn] - p.center))
                    if abs(r - p.radius) > 1e-6 * p.radius + 1e-15:
                        raise InvalidNetworkError(
                            f"bound node {nn} off circle by {r - p.radius}")

        if full:
            seen = np.zeros(self._n_hes, dtype=bool)
            for h0 in hs:
                if seen[h0]:
                    continue
                walk = self.face_walk(int(h0))
                seen[walk] = True
                if len(walk) < 2:
                    raise InvalidNetworkError("degenerate loop")

    # ------------------------------------------------------------------

    def stats_basis(self):
        """(grain ids, areas, total boundary length) for metrology."""
        gs, areas = self.grain_areas()
        segs = self.segments()
        o, d = self._horig[segs], self._horig[self._htwin[segs]]
        ln = norm2(self._pos[d] - self._pos[o])
        return gs, areas, segs, ln


def _bisector(ta, tb):
    ua = ta / max(float(norm2(ta)), 1e-300)
    ub = tb / max(float(norm2(tb)), 1e-300)
    s = ua + ub
    n = float(norm2(s))
    if n < 1e-12:
        return np.array([-ua[1], ua[0]])
    return s / n


def _wedge_contains(t1, t2, d):
    """True if direction d lies in the CCW wedge from t1 to t2."""
    c12 = cross2(t1, t2)
    c1d = cross2(t1, d)
    cd2 = cross2(d, t2)
    if c12 >= 0:
        return c1d >= 0 and cd2 >= 0
    return not (cross2(t2, d) >= 0 and cross2(d, t1) >= 0)
