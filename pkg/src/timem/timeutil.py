"""UTC timestamp helpers (second resolution, ISO-8601 with Z suffix)."""

from __future__ import annotations

from datetime import date, datetime, timedelta, timezone


def parse_ts(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_ts(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def utc(year: int, month: int, day: int, hour: int = 0, minute: int = 0, second: int = 0) -> datetime:
    return datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)


def day_window(dt: datetime) -> tuple[datetime, datetime]:
    """[00:00, next day 00:00) of the UTC calendar day containing dt."""
    start = datetime(dt.year, dt.month, dt.day, tzinfo=timezone.utc)
    return start, start + timedelta(days=1)


def week_window(dt: datetime) -> tuple[datetime, datetime]:
    """[Monday 00:00, next Monday 00:00) of the ISO week containing dt."""
    iso = dt.date().isocalendar()
    monday = date.fromisocalendar(iso[0], iso[1], 1)
    start = datetime(monday.year, monday.month, monday.day, tzinfo=timezone.utc)
    return start, start + timedelta(days=7)


def month_window(dt: datetime) -> tuple[datetime, datetime]:
    """[1st 00:00, 1st of next month 00:00) of the calendar month containing dt."""
    start = datetime(dt.year, dt.month, 1, tzinfo=timezone.utc)
    if dt.month == 12:
        end = datetime(dt.year + 1, 1, 1, tzinfo=timezone.utc)
    else:
        end = datetime(dt.year, dt.month + 1, 1, tzinfo=timezone.utc)
    return start, end


def day_key(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%d")


def week_key(dt: datetime) -> str:
    iso = dt.date().isocalendar()
    return f"{iso[0]}-W{iso[1]:02d}"


def month_key(dt: datetime) -> str:
    return dt.strftime("%Y-%m")
