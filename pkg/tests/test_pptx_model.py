"""Deck model and archive round-trip behavior."""

from __future__ import annotations

import zipfile

import pytest

from deckbuilder import build_deck, png_bytes, sample_deck, table_shape, text_shape, pic_shape
from deckgen.pptx import (
    ElementKind,
    MalformedXml,
    MissingPresentationPart,
    NotAZip,
    UnknownSlide,
    load_presentation,
    save_presentation,
    structural_equal,
)


@pytest.fixture()
def deck_path(tmp_path):
    return sample_deck(tmp_path / "deck.pptx")


def entries_of(path):
    with zipfile.ZipFile(path) as zf:
        return {n: zf.read(n) for n in zf.namelist()}


def test_load_basic_structure(deck_path):
    pres = load_presentation(str(deck_path))
    assert pres.slide_ids() == [f"slide{i}" for i in range(1, 7)]
    assert pres.slide_size == (12192000, 6858000)

    kinds = [e.kind for e in pres.slide("slide3").elements]
    assert kinds == [ElementKind.TEXT_FRAME, ElementKind.PICTURE]
    kinds = [e.kind for e in pres.slide("slide4").elements]
    assert kinds == [ElementKind.TEXT_FRAME, ElementKind.OTHER]


def test_text_views(deck_path):
    pres = load_presentation(str(deck_path))
    frame = pres.slide("slide2").elements[0]
    paras = frame.paragraphs
    assert [p.text() for p in paras] == ["Agenda", "Results", "Outlook"]
    assert frame.text() == "Agenda\nResults\nOutlook"

    multi = pres.slide("slide3").elements[0].paragraphs[1]
    assert [s.text for s in multi.spans] == ["Revenue up ", "12%"]
    assert multi.text() == "Revenue up  12%"


def test_bbox_and_picture_metadata(deck_path):
    pres = load_presentation(str(deck_path))
    title = pres.slide("slide1").elements[0]
    assert (title.bbox.x, title.bbox.y) == (914400, 914400)
    assert (title.bbox.w, title.bbox.h) == (10363200, 1143000)

    pic = pres.slide("slide3").elements[1]
    assert pic.image_id == "ppt/media/image1.png"
    assert pic.alt_text == "Revenue chart"
    assert pres.media["ppt/media/image1.png"].mime == "image/png"

    table = pres.slide("slide4").elements[1]
    assert table.bbox.w == 6858000


def test_unchanged_save_preserves_every_part(deck_path, tmp_path):
    pres = load_presentation(str(deck_path))
    out = tmp_path / "out.pptx"
    save_presentation(pres, str(out))
    assert entries_of(out) == entries_of(deck_path)


def test_save_is_deterministic(deck_path, tmp_path):
    pres = load_presentation(str(deck_path))
    pres.slide("slide2").elements[0].paragraphs[0].spans[0].text = "Agenda v2"
    a, b = tmp_path / "a.pptx", tmp_path / "b.pptx"
    save_presentation(pres, str(a))
    save_presentation(pres, str(b))
    assert a.read_bytes() == b.read_bytes()


def test_text_edit_touches_only_that_slide(deck_path, tmp_path):
    before = entries_of(deck_path)
    pres = load_presentation(str(deck_path))
    span = pres.slide("slide3").elements[0].paragraphs[0].spans[0]
    span.text = "Annual results"
    out = tmp_path / "out.pptx"
    save_presentation(pres, str(out))
    after = entries_of(out)

    changed = {n for n in before if before[n] != after.get(n)}
    assert changed == {"ppt/slides/slide3.xml"}

    reloaded = load_presentation(str(out))
    frame = reloaded.slide("slide3").elements[0]
    assert frame.paragraphs[0].spans[0].text == "Annual results"
    # Styling of the edited run survives the rewrite.
    assert b'sz="3200"' in frame.paragraphs[0].spans[0].style_xml
    assert b'b="1"' in frame.paragraphs[0].spans[0].style_xml


def test_clone_slide_appends_copy(deck_path, tmp_path):
    pres = load_presentation(str(deck_path))
    new_id = pres.clone_slide("slide2")
    assert new_id not in [f"slide{i}" for i in range(1, 7)]
    assert pres.slide_ids()[-1] == new_id
    assert pres.slide(new_id).elements[0].text() == "Agenda\nResults\nOutlook"

    # Clone is independent of its source.
    pres.slide(new_id).elements[0].paragraphs[0].spans[0].text = "Agenda copy"
    assert pres.slide("slide2").elements[0].paragraphs[0].spans[0].text == "Agenda"

    out = tmp_path / "out.pptx"
    save_presentation(pres, str(out))
    reloaded = load_presentation(str(out))
    assert len(reloaded.slides) == 7
    assert reloaded.slides[-1].elements[0].paragraphs[0].spans[0].text == "Agenda copy"
    entries = entries_of(out)
    assert f"ppt/slides/{new_id}.xml" in entries
    assert f"/ppt/slides/{new_id}.xml".encode() in entries["[Content_Types].xml"]


def test_retain_slides_reorders(deck_path, tmp_path):
    pres = load_presentation(str(deck_path))
    pres.retain_slides(["slide1", "slide5", "slide2"])
    out = tmp_path / "out.pptx"
    save_presentation(pres, str(out))
    reloaded = load_presentation(str(out))
    texts = [s.elements[0].paragraphs[0].spans[0].text for s in reloaded.slides]
    assert texts == ["Quarterly Review", "Outlook", "Agenda"]


def test_remove_slide_garbage_collects(deck_path, tmp_path):
    pres = load_presentation(str(deck_path))
    pres.remove_slide("slide3")  # only slide referencing image1.png
    out = tmp_path / "out.pptx"
    save_presentation(pres, str(out))
    entries = entries_of(out)
    assert "ppt/slides/slide3.xml" not in entries
    assert "ppt/slides/_rels/slide3.xml.rels" not in entries
    assert "ppt/media/image1.png" not in entries
    assert b"/ppt/slides/slide3.xml" not in entries["[Content_Types].xml"]
    assert b"slides/slide3.xml" not in entries["ppt/_rels/presentation.xml.rels"]
    assert len(load_presentation(str(out)).slides) == 5


def test_clone_keeps_media_alive_after_source_removed(deck_path, tmp_path):
    pres = load_presentation(str(deck_path))
    new_id = pres.clone_slide("slide3")
    pres.remove_slide("slide3")
    out = tmp_path / "out.pptx"
    save_presentation(pres, str(out))
    reloaded = load_presentation(str(out))
    pic = reloaded.slide(new_id).elements[1]
    assert pic.kind is ElementKind.PICTURE
    assert reloaded.media[pic.image_id].data == png_bytes()


def test_replace_image_swaps_rel_and_gcs_old_media(deck_path, tmp_path):
    pres = load_presentation(str(deck_path))
    fresh = png_bytes(rgb=(10, 120, 240))
    media_id = pres.add_media(fresh, "png")
    pic = pres.slide("slide3").elements[1]
    pic.set_image(media_id, alt_text="Blue square")

    out = tmp_path / "out.pptx"
    save_presentation(pres, str(out))
    entries = entries_of(out)
    assert "ppt/media/image1.png" not in entries
    reloaded = load_presentation(str(out))
    pic2 = reloaded.slide("slide3").elements[1]
    assert pic2.alt_text == "Blue square"
    assert reloaded.media[pic2.image_id].data == fresh


def test_add_media_dedupes_by_content(deck_path):
    pres = load_presentation(str(deck_path))
    data = png_bytes(rgb=(1, 2, 3))
    assert pres.add_media(data, "png") == pres.add_media(data, "png")
    # Same bytes as an existing archive image reuse its part.
    assert pres.add_media(png_bytes(), "png") == "ppt/media/image1.png"


def test_snapshot_restore_reverts_tree_and_rels(deck_path):
    pres = load_presentation(str(deck_path))
    slide = pres.slide("slide3")
    state = slide.snapshot()

    slide.elements[0].paragraphs[0].spans[0].text = "mangled"
    media_id = pres.add_media(png_bytes(rgb=(9, 9, 9)), "png")
    slide.elements[1].set_image(media_id)
    slide.remove_element(0)
    assert len(slide.elements) == 1

    slide.restore(state)
    assert len(slide.elements) == 2
    assert slide.elements[0].paragraphs[0].spans[0].text == "Results"
    assert slide.elements[1].image_id == "ppt/media/image1.png"
    assert not slide.dirty


def test_structural_equal(deck_path, tmp_path):
    a = load_presentation(str(deck_path))
    b = load_presentation(str(deck_path))
    assert structural_equal(a, b)
    b.slide("slide2").elements[0].paragraphs[0].spans[0].text = "x"
    assert not structural_equal(a, b)


def test_clone_paragraph_inserts_adjacent_copy(deck_path):
    pres = load_presentation(str(deck_path))
    frame = pres.slide("slide2").elements[0]
    frame.clone_paragraph(1)
    assert [p.text() for p in frame.paragraphs] == ["Agenda", "Results", "Results", "Outlook"]


def test_unknown_slide(deck_path):
    pres = load_presentation(str(deck_path))
    with pytest.raises(UnknownSlide):
        pres.slide("slide99")


def test_not_a_zip(tmp_path):
    bogus = tmp_path / "bogus.pptx"
    bogus.write_bytes(b"this is not a zip archive")
    with pytest.raises(NotAZip):
        load_presentation(str(bogus))


def test_missing_presentation_part(tmp_path):
    path = tmp_path / "empty.pptx"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("hello.txt", "nothing to see")
    with pytest.raises(MissingPresentationPart):
        load_presentation(str(path))


def test_malformed_slide_xml(tmp_path, deck_path):
    entries = entries_of(deck_path)
    entries["ppt/slides/slide2.xml"] = b"<p:sld broken"
    path = tmp_path / "broken.pptx"
    with zipfile.ZipFile(path, "w") as zf:
        for name, data in entries.items():
            zf.writestr(name, data)
    with pytest.raises(MalformedXml):
        load_presentation(str(path))


def test_empty_frame_and_defaults(tmp_path):
    path = build_deck(tmp_path / "tiny.pptx", [[text_shape([[("only", None)]], sid=2)]])
    pres = load_presentation(str(path))
    frame = pres.slide("slide1").elements[0]
    frame.remove_paragraph(0)
    assert frame.paragraphs == []
    assert frame.text() == ""
    assert frame.kind is ElementKind.TEXT_FRAME
