"""Gmsh ASCII 2.2 reader and writer for 10-node tets and 6-node triangles."""

from __future__ import annotations

import logging
import shlex
from pathlib import Path

import numpy as np

from .core import Mesh, MeshError, check_jacobians, orient_faces

log = logging.getLogger(__name__)

TET10 = 11
TRI6 = 9
# points and (quadratic) lines carry no information this code uses
_SKIPPED = {15, 1, 8}

#: default mapping of canonical surface roles to cavities
DEFAULT_CAVITIES = {
    "left": [("endocardium_left", -1), ("closure_left", 1)],
    "right": [("endocardium_right", -1), ("closure_right", 1)],
}
CLOSURE_ROLES = {"closure_left", "closure_right", "closure_la", "closure_ra"}


def _sections(lines):
    out = {}
    name, buf = None, []
    for ln in lines:
        s = ln.strip()
        if s.startswith("$"):
            if name is None:
                name, buf = s[1:], []
            elif s == f"$End{name}":
                out[name] = buf
                name = None
            else:
                raise MeshError(f"unterminated section ${name}")
        elif name is not None:
            buf.append(s)
    if name is not None:
        raise MeshError(f"unterminated section ${name}")
    return out


def load_gmsh(path, name_map=None, *, scale=1e-3, closures=None, cavities=None) -> Mesh:
    """Read a Gmsh v2.2 ASCII file.

    Parameters
    ----------
    path : path-like
    name_map : dict, optional
        Physical-group name -> surface role. When given, every 2D group
        must be mapped. Without it the group names are used verbatim.
    scale : float
        Multiplies file coordinates; the default converts mm to m.
    closures : iterable of str, optional
        Roles treated as geometry-only closures. Defaults to the canonical
        ``closure_*`` roles.
    cavities : dict, optional
        Cavity definitions over roles; defaults keep only cavities whose
        surfaces are all present.
    """
    text = Path(path).read_text().splitlines()
    sec = _sections(text)
    for need in ("MeshFormat", "Nodes", "Elements"):
        if need not in sec:
            raise MeshError(f"missing ${need} section")
    fmt = sec["MeshFormat"][0].split()
    if not fmt or fmt[0] not in ("2.2", "2.2.0"):
        raise MeshError(f"unsupported Gmsh format version {fmt[0] if fmt else '?'}; only ASCII 2.2 is read")
    if len(fmt) > 1 and fmt[1] != "0":
        raise MeshError("binary Gmsh files are not supported")

    phys = {}
    for ln in sec.get("PhysicalNames", [])[1:]:
        parts = shlex.split(ln)
        phys[(int(parts[0]), int(parts[1]))] = parts[2]

    try:
        nn = int(sec["Nodes"][0])
        raw = np.array([ln.split() for ln in sec["Nodes"][1 : nn + 1]], dtype=float)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed $Nodes section: {exc}") from None
    if raw.shape != (nn, 4):
        raise MeshError("malformed $Nodes section")
    ids = raw[:, 0].astype(np.int64)
    index = {int(g): i for i, g in enumerate(ids)}
    nodes = raw[:, 1:] * scale

    tets, tet_tags, tet_ids, tris = [], [], [], {}
    try:
        ne = int(sec["Elements"][0])
        rows = sec["Elements"][1 : ne + 1]
    except (ValueError, IndexError):
        raise MeshError("malformed $Elements section") from None
    if len(rows) != ne:
        raise MeshError("malformed $Elements section: count mismatch")
    for ln in rows:
        v = [int(s) for s in ln.split()]
        eid, etype, ntag = v[0], v[1], v[2]
        tags = v[3 : 3 + ntag]
        conn = v[3 + ntag :]
        phys_tag = tags[0] if tags else 0
        if etype in _SKIPPED:
            continue
        try:
            conn = [index[c] for c in conn]
        except KeyError as exc:
            raise MeshError(f"element {eid} references unknown node {exc}") from None
        if etype == TET10:
            if len(conn) != 10:
                raise MeshError(f"element {eid}: expected 10 nodes")
            tets.append(conn)
            tet_tags.append(phys_tag)
            tet_ids.append(eid)
        elif etype == TRI6:
            if len(conn) != 6:
                raise MeshError(f"element {eid}: expected 6 nodes")
            tris.setdefault(phys_tag, []).append(conn)
        else:
            raise MeshError(f"element {eid}: unsupported element type {etype} (need 11 = tet10, 9 = tri6)")

    surfaces = {}
    for tag, faces in sorted(tris.items()):
        name = phys.get((2, tag), str(tag))
        if name_map is not None:
            if name not in name_map:
                raise MeshError(f"physical group {name!r} is not mapped to a surface role")
            name = name_map[name]
        surfaces.setdefault(name, []).extend(faces)

    region_names = {}
    for tag in sorted(set(tet_tags)):
        region_names[tag] = phys.get((3, tag), str(tag))

    closures = set(CLOSURE_ROLES if closures is None else closures) & set(surfaces)
    if cavities is None:
        cavities = {
            k: v for k, v in DEFAULT_CAVITIES.items() if all(s in surfaces for s, _ in v)
        }

    elements = np.array(tets, dtype=np.int64).reshape(-1, 10)
    tmp = Mesh(nodes, elements)
    if len(elements):
        jac = check_jacobians(tmp, raise_on_error=False)
        if np.any(jac <= 0.0):
            # report the Gmsh element id, not the internal index
            raise MeshError(f"non-positive Jacobian in element {tet_ids[int(np.argmin(jac))]}")
    oriented = {}
    for name, faces in surfaces.items():
        faces = np.array(faces, dtype=np.int64)
        oriented[name] = faces if name in closures else orient_faces(tmp, name, faces)
    return Mesh(
        nodes,
        elements,
        oriented,
        closures,
        cavities,
        regions=np.array(tet_tags, dtype=np.int64),
        region_names=region_names,
        metadata={"source": str(path)},
    )


def write_gmsh(mesh: Mesh, path, *, scale=1e3) -> None:
    """Write ``mesh`` as Gmsh v2.2 ASCII; coordinates are multiplied by ``scale``."""
    names = sorted(mesh.surfaces)
    surf_tag = {n: i + 1 for i, n in enumerate(names)}
    regions = sorted(set(mesh.regions.tolist())) if mesh.n_elements else []
    reg_tag = {r: 100 + r for r in regions}
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(names) + len(regions))]
    out += [f'2 {surf_tag[n]} "{n}"' for n in names]
    out += [f'3 {reg_tag[r]} "{mesh.region_names.get(r, f"region{r}")}"' for r in regions]
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_nodes)]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate((mesh.nodes * scale).tolist())]
    out += ["$EndNodes", "$Elements"]
    rows = []
    eid = 1
    for e, conn in enumerate(mesh.elements):
        t = reg_tag[int(mesh.regions[e])]
        rows.append(f"{eid} {TET10} 2 {t} {t} " + " ".join(str(c + 1) for c in conn))
        eid += 1
    for n in names:
        for conn in mesh.surfaces[n]:
            rows.append(f"{eid} {TRI6} 2 {surf_tag[n]} {surf_tag[n]} " + " ".join(str(c + 1) for c in conn))
            eid += 1
    out += [str(len(rows))] + rows + ["$EndElements", ""]
    Path(path).write_text("\n".join(out))
