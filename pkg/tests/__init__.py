"""Tests for the margin-aware portfolio risk tools"""
