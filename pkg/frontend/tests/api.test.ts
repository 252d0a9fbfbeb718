import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { displayOrder, entryLabel, isHighlighted } from "../src/worklist.js";
import { WorklistEntry } from "../src/types.js";

function stubFetch(status: number, body: unknown) {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const impl = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), { status });
  };
  return { impl, calls };
}

describe("ApiClient", () => {
  it("sends the personalization header on every request", async () => {
    const { impl, calls } = stubFetch(200, { data: [], status: "ready" });
    const client = new ApiClient("http://svc", "radiologist-2", impl);
    await client.worklist();
    const headers = calls[0]!.init!.headers as Record<string, string>;
    expect(headers["X-User-Id"]).toBe("radiologist-2");
    expect(calls[0]!.url).toBe("http://svc/worklist");
  });

  it("uses the POST alias for inference", async () => {
    const { impl, calls } = stubFetch(200, { data: [], status: "ready" });
    const client = new ApiClient("", "u", impl);
    await client.infer("AAAA", 64, 64, "lesion-detector");
    expect(calls[0]!.url).toBe("/bounding-box");
    expect(calls[0]!.init!.method).toBe("POST");
    expect(JSON.parse(calls[0]!.init!.body as string)).toEqual({
      image: "AAAA", model: "lesion-detector", width: 64, height: 64,
    });
  });

  it("surfaces the service's machine-readable error", async () => {
    const { impl } = stubFetch(400, { error: "unknown field 'bogus'" });
    const client = new ApiClient("", "u", impl);
    await expect(client.health()).rejects.toThrowError(ApiError);
    await expect(client.health()).rejects.toMatchObject({
      status: 400,
      message: "unknown field 'bogus'",
    });
  });

  it("maps a network failure to status 0", async () => {
    const client = new ApiClient("", "u", async () => {
      throw new Error("connection refused");
    });
    await expect(client.worklist()).rejects.toMatchObject({ status: 0 });
  });
});

describe("worklist presentation", () => {
  const entries: WorklistEntry[] = [
    { study_id: "s1", accession_order: 1, modality: "CR", priority: 0.9, assigned_to: "u1", state: "assigned" },
    { study_id: "s3", accession_order: 3, modality: "CR", priority: 0.9, assigned_to: null, state: "unread" },
    { study_id: "s2", accession_order: 2, modality: "CR", priority: 0.2, assigned_to: "u2", state: "assigned" },
  ];

  it("never re-sorts: server order is display order", () => {
    expect(displayOrder(entries).map((e) => e.study_id)).toEqual(["s1", "s3", "s2"]);
  });

  it("highlights the logged-in reader's assignments", () => {
    expect(isHighlighted(entries[0]!, "u1")).toBe(true);
    expect(isHighlighted(entries[1]!, "u1")).toBe(false);
  });

  it("labels show priority or a placeholder", () => {
    expect(entryLabel(entries[0]!)).toContain("p=0.90");
    expect(entryLabel({ ...entries[1]!, priority: null })).toContain("p=–");
  });
});
